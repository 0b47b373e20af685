use std::collections::BTreeMap;

use polyf0_py::{decode_multi, hcqt, mix_weights, multi_f0_scores, nnls_solve, salience_target, single_f0_scores, strum, PyGrid};

#[test]
fn target_decodes_back_to_its_pitches() {
    let grid = PyGrid::new(20, 22050, 256, None, 60, 6).unwrap();
    assert_eq!(grid.shape(), (360, 20));
    let times: Vec<f64> = grid.times();
    let sets: Vec<Vec<f64>> = (0..20).map(|n| if n < 5 { vec![] } else { vec![110.0, 440.0] }).collect();
    let values = salience_target(&grid, times.clone(), sets.clone()).unwrap();
    let (t, decoded) = decode_multi(&grid, values, 0.5).unwrap();
    assert_eq!(t, times);
    let scores = multi_f0_scores(times.clone(), sets, t, decoded).unwrap();
    assert_eq!(scores["Acc"], Some(1.0));
    assert_eq!(scores["FP"], Some(0.0));
}

#[test]
fn wrong_sizes_are_errors() {
    let grid = PyGrid::new(4, 22050, 256, None, 60, 6).unwrap();
    assert!(decode_multi(&grid, vec![0.0; 10], 0.3).is_err());
    assert!(PyGrid::new(4, 22050, 0, None, 60, 6).is_err());
    assert!(nnls_solve(vec![vec![1.0, 2.0], vec![1.0]], vec![0.0, 1.0]).is_err());
    assert!(single_f0_scores(vec![0.0], vec![100.0], vec![0.0], vec![100.0]).is_err());
}

#[test]
fn hcqt_shape() {
    let samples: Vec<f32> = (0..22050).map(|n| (n as f32 * 0.05).sin()).collect();
    let (values, shape) = hcqt(samples, 22050, 256, None, 60, 6, Some(vec![1, 2]), 1000.0).unwrap();
    assert_eq!((shape.0, shape.1), (2, 360));
    assert_eq!(values.len(), shape.0 * shape.1 * shape.2);
}

#[test]
fn nnls_and_mix_weights() {
    let (x, r) = nnls_solve(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![2.0, -1.0]).unwrap();
    assert_eq!(x, vec![2.0, 0.0]);
    assert!((r - 1.0).abs() < 1e-12);
    let a: Vec<f32> = (0..8000).map(|n| (n as f32 * 0.031).sin()).collect();
    let b: Vec<f32> = (0..8000)
        .map(|n| if (n / 400) % 2 == 0 { (n as f32 * 0.17).sin() } else { 0.0 })
        .collect();
    let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| 0.5 * x + 2.0 * y).collect();
    let w = mix_weights(vec![a, b], mix, 8000, "envelope").unwrap();
    assert!((w[0] - 0.5).abs() < 0.01 && (w[1] - 2.0).abs() < 0.04, "{w:?}");
    assert!(mix_weights(vec![], vec![0.0], 8000, "loudness").is_err());
}

#[test]
fn strum_is_seeded() {
    let voicings = BTreeMap::from([("C".to_string(), vec![vec![48u8, 52, 55]])]);
    let chords = vec![(1.0, 2.0, "C".to_string()), (2.0, 3.0, "C".to_string())];
    let a = strum(chords.clone(), voicings.clone(), 9).unwrap();
    assert_eq!(a, strum(chords, voicings, 9).unwrap());
    assert_eq!(a.iter().map(|n| n.2).collect::<Vec<_>>(), vec![48, 52, 55, 55, 52, 48]);
}
