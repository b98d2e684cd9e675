//! The full codec network and its checkpoint format.

use std::collections::HashMap;
use std::path::Path;

use ctxvc_autograd::nn::ParamBuilder;
use ctxvc_autograd::{Graph, ParamStore, Real, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::autoencoder::{FeatureExtractor, Reconstructor};
use crate::config::CodecConfig;
use crate::contextual::ContextualCodec;
use crate::entropy::Quantizer;
use crate::error::{Error, Result};
use crate::intra::IntraCodec;
use crate::motion_codec::MotionCodec;
use crate::motion_comp::MotionCompensation;
use crate::ms_mam::MsMam;

/// Tag stored with every checkpoint; decoding requires the same arithmetic.
pub const NUMERIC_MODE: &str = "f32-serial-v1";

#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub extractor: FeatureExtractor,
    pub motion_estimator: MsMam,
    pub motion_codec: MotionCodec,
    pub compensation: MotionCompensation,
    pub contextual: ContextualCodec,
    pub reconstructor: Reconstructor,
    pub intra: IntraCodec,
}

/// Training-path P frame: reconstruction and the four rate terms in bits.
#[derive(Clone, Copy, Debug)]
pub struct PFrameForward {
    pub x_hat: Var,
    pub f_pred: Var,
    pub motion: Var,
    pub bits_m: Var,
    pub bits_z: Var,
    pub bits_c: Var,
    pub bits_s: Var,
}

impl CodecModel {
    /// Registers every parameter in `store`, initialised from `config.seed`.
    pub fn build<T: Real>(config: &CodecConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut pb = ParamBuilder::new(store, &mut rng);
        let c = config;
        Ok(CodecModel {
            config: c.clone(),
            extractor: FeatureExtractor::new(&mut pb, "extractor", c.feature_channels),
            motion_estimator: MsMam::new(
                &mut pb,
                "ms_mam",
                c.feature_channels,
                c.motion_channels,
                c.motion_aware_dim,
                c.multiscale_motion,
            ),
            motion_codec: MotionCodec::new(&mut pb, "motion_codec", c),
            compensation: MotionCompensation::new(&mut pb, "compensation", c.motion_channels, c.feature_channels, c.deform_groups),
            contextual: ContextualCodec::new(&mut pb, "contextual", c),
            reconstructor: Reconstructor::new(&mut pb, "reconstructor", c.feature_channels),
            intra: IntraCodec::new(&mut pb, "intra", c),
        })
    }

    pub fn new(config: &CodecConfig) -> Result<(Self, ParamStore<f32>)> {
        let mut store = ParamStore::new();
        let model = Self::build(config, &mut store)?;
        Ok((model, store))
    }

    /// Differentiable P-frame pass; `x_ref` is the previous reconstruction.
    pub fn p_forward<T: Real>(&self, g: &mut Graph<T>, x_cur: Var, x_ref: Var, q: &mut Quantizer) -> Result<PFrameForward> {
        let (pc, pr) = self.extractor.extract(g, x_cur, x_ref)?;
        let v = self.motion_estimator.estimate(g, &pc, &pr)?;
        let mf = self.motion_codec.forward(g, v, q);
        let f_pred = self.compensation.forward(g, mf.v_hat, pr.levels[0])?;
        let cf = self.contextual.forward(g, pc.levels[0], f_pred, q)?;
        let x_hat = self.reconstructor.forward(g, cf.f_hat)?;
        Ok(PFrameForward {
            x_hat,
            f_pred,
            motion: v,
            bits_m: mf.bits_m,
            bits_z: mf.bits_z,
            bits_c: cf.bits_c,
            bits_s: cf.bits_s,
        })
    }
}

/// Serialises all parameters (f32) with the config and numeric mode as metadata.
pub fn checkpoint_bytes(config: &CodecConfig, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = store
        .entries()
        .map(|(_, e)| {
            let bytes = e.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (e.name.clone(), e.value.shape().to_vec(), bytes)
        })
        .collect();
    let views = raw
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([
        ("config".to_string(), serde_json::to_string(config)?),
        ("numeric_mode".to_string(), NUMERIC_MODE.to_string()),
    ]);
    safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(path: &Path, config: &CodecConfig, store: &ParamStore<f32>) -> Result<()> {
    let bytes = checkpoint_bytes(config, store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model from the embedded config and fills every parameter by name.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(CodecModel, ParamStore<f32>)> {
    let ck = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(ck)?;
    let info = meta.metadata().as_ref().ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
    let mode = info.get("numeric_mode").map(String::as_str).unwrap_or("");
    if mode != NUMERIC_MODE {
        return Err(Error::ModelMismatch(format!("numeric mode {mode:?}, expected {NUMERIC_MODE:?}")));
    }
    let config: CodecConfig =
        serde_json::from_str(info.get("config").ok_or_else(|| Error::Checkpoint("missing config".into()))?)?;
    let (model, mut store) = CodecModel::new(&config)?;
    let st = SafeTensors::deserialize(bytes).map_err(ck)?;
    if st.len() != store.len() {
        return Err(Error::Checkpoint(format!("{} tensors, model has {}", st.len(), store.len())));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.entry(id).name.clone();
        let view = st.tensor(&name).map_err(ck)?;
        let target = store.get_mut(id);
        if view.dtype() != Dtype::F32 || view.shape() != target.shape() {
            return Err(Error::Checkpoint(format!("tensor {name}: {:?} {:?}", view.dtype(), view.shape())));
        }
        for (dst, src) in target.data_mut().iter_mut().zip(view.data().chunks_exact(4)) {
            *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
        }
    }
    Ok((model, store))
}

pub fn load_checkpoint(path: &Path) -> Result<(CodecModel, ParamStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
