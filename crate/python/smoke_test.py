"""Builds the pyctxvc extension and exercises it end to end.

    python3 python/smoke_test.py            # build, then test
    python3 python/smoke_test.py --no-build # reuse target/release
"""

import importlib.util
import json
import math
import pathlib
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "ctxvc-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )


def load_module(tmp):
    lib = ROOT / "target" / "release" / "libpyctxvc.so"
    if not lib.exists():
        sys.exit(f"{lib} not found; build first")
    dest = pathlib.Path(tmp) / ("pyctxvc" + sysconfig.get_config_var("EXT_SUFFIX"))
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("pyctxvc", dest)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    if "--no-build" not in sys.argv:
        build()
    with tempfile.TemporaryDirectory() as tmp:
        m = load_module(tmp)

        assert abs(m.gaussian_bits(0.0, 0.0, 1.0) - 1.3849) < 1e-3

        probs = [0.4, 0.3, 0.2, 0.1]
        syms = [0, 3, 2, 1, 1, 0, 9, -2]
        data = m.encode_symbols(probs, syms, tail=0.01)
        assert m.decode_symbols(probs, data, len(syms), tail=0.01) == syms

        curve = [(256, 0.03, 29.0, 0.93), (512, 0.05, 31.0, 0.95), (1024, 0.09, 33.0, 0.96), (2048, 0.17, 34.5, 0.97)]
        doubled = [(l, 2 * b, p, s) for l, b, p, s in curve]
        assert m.bd_rate(curve, curve) == 0.0
        assert abs(m.bd_rate(curve, doubled) - 100.0) < 0.1

        w, h = 64, 64
        frames = m.synthetic_clip(3, w, h, seed=1)
        codec = m.Codec(tiny=True, lambda_=2048.0, seed=3)
        stream = codec.encode(frames, w, h, gop=10)
        dw, dh, decoded = codec.decode(stream)
        assert (dw, dh, len(decoded)) == (w, h, 3)
        assert codec.decode(stream)[2] == decoded

        stats = json.loads(m.stats(stream))
        assert [s["frame_type"] for s in stats] == ["I", "P", "P"], stats
        p = m.psnr(frames[1], decoded[1], w, h)
        assert math.isfinite(p) and p > 0
        assert m.psnr(frames[0], frames[0], w, h) == 100.0
        assert 0.0 < m.ms_ssim(frames[1], decoded[1], w, h) <= 1.0

        ckpt = pathlib.Path(tmp) / "model.safetensors"
        codec.save(str(ckpt))
        again = m.Codec.load(str(ckpt))
        assert again.decode(stream)[2] == decoded

        print(f"pyctxvc {m.__version__}: {codec!r}, {len(stream)} bytes, P-frame PSNR {p:.2f} dB")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
