use pyctxvc::{decode_symbols, encode_symbols, frame_from_list};

#[test]
fn symbols_round_trip_through_plain_helpers() {
    let probs = [0.5, 0.25, 0.125, 0.125];
    let syms = [0, 1, 3, 2, 0, 0, 7, -4, 1];
    let bytes = encode_symbols(-1, &probs, 0.01, &syms).unwrap();
    assert_eq!(decode_symbols(-1, &probs, 0.01, &bytes, syms.len()).unwrap(), syms);
}

#[test]
fn frame_length_is_checked() {
    assert!(frame_from_list(vec![0.0; 12], 2, 2).is_ok());
    assert!(frame_from_list(vec![0.0; 11], 2, 2).is_err());
}

#[test]
fn bad_probabilities_are_rejected() {
    assert!(encode_symbols(0, &[0.5, f64::NAN], 0.0, &[0]).is_err());
    assert!(encode_symbols(0, &[0.0, 0.0], 0.0, &[0]).is_err());
    assert!(encode_symbols(0, &[], 1.0, &[0]).is_err());
}
