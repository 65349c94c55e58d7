mod common;

use common::{mnist, toy};
use splitquant::nn::LayerStats;

#[test]
fn mnist_architecture_and_counts() {
    let m = &mnist().model;
    assert_eq!(m.num_learnable(), 6);
    let stats = LayerStats::of(m);
    assert_eq!(stats.z_w(1), 401_408);
    let widths = [784u64, 512, 256, 128, 64, 32, 10];
    let hand: u64 = widths.windows(2).map(|w| w[0] * w[1]).sum();
    assert_eq!(hand, 575_808);
    assert_eq!(stats.total_macs(), hand);
    for l in 1..=6 {
        assert_eq!(stats.o(l), widths[l - 1] * widths[l]);
        assert_eq!(stats.z_w(l), stats.o(l));
        assert_eq!(stats.z_x(l), widths[l]);
    }
}

#[test]
fn recorded_predictions_match() {
    for r in [mnist(), toy()] {
        let rec = r.model.recorded().expect("exporter recorded predictions");
        assert_eq!(rec.predictions.len(), r.data.test.len());
        let mut hits = 0;
        for (i, (x, label)) in r.data.test.samples().enumerate() {
            let pred = r.model.predict(&x).unwrap();
            assert_eq!(pred, rec.predictions[i] as usize, "{} sample {i}", r.model.id());
            hits += (pred == label) as usize;
        }
        let acc = hits as f64 / r.data.test.len() as f64;
        assert!((acc - rec.test_accuracy).abs() < 1e-12);
    }
}

#[test]
fn split_execution_is_bit_exact() {
    let m = &mnist().model;
    for i in [0, 17, 999] {
        let x = mnist().data.test.sample(i);
        let full = m.forward(&x).unwrap();
        for p in 1..=6 {
            let head = m.forward_to(&x, p).unwrap();
            assert_eq!(head.shape(), m.activation_shape(p).unwrap());
            assert_eq!(m.forward_from(&head, p).unwrap().data(), full.data());
        }
    }
}

#[test]
fn segment_macs_are_monotone() {
    let stats = LayerStats::of(&mnist().model);
    let mut prev = (0, u64::MAX);
    for p in 1..=6 {
        let (o1, o2) = stats.segment_macs(p).unwrap();
        assert_eq!(o1 + o2, stats.total_macs());
        assert!(o1 >= prev.0 && o2 <= prev.1);
        prev = (o1, o2);
    }
    assert_eq!(prev.1, 0);
    assert!(stats.segment_macs(0).is_err() && stats.segment_macs(7).is_err());
}
