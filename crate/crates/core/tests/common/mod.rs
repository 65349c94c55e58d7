#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use splitquant::accuracy::{calibrate_profile, CalibrationConfig, RobustnessProfile};
use splitquant::nn::{load_model, DatasetBundle, Model};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub struct Reference {
    pub model: Model,
    pub data: DatasetBundle,
}

pub fn load(name: &str) -> Reference {
    Reference {
        model: load_model(fixture(name).join("model")).expect("fixture model loads"),
        data: DatasetBundle::load(fixture(name).join("data")).expect("fixture data loads"),
    }
}

pub fn toy() -> &'static Reference {
    static TOY: OnceLock<Reference> = OnceLock::new();
    TOY.get_or_init(|| load("toy-2layer"))
}

pub fn mnist() -> &'static Reference {
    static MNIST: OnceLock<Reference> = OnceLock::new();
    MNIST.get_or_init(|| load("mnist-mlp6"))
}

pub fn toy_profile() -> &'static RobustnessProfile {
    static PROFILE: OnceLock<RobustnessProfile> = OnceLock::new();
    PROFILE.get_or_init(|| {
        let t = toy();
        let calib = t.data.train.seeded_subset(512, 1234);
        calibrate_profile(&t.model, &calib, &CalibrationConfig::default()).expect("toy calibration succeeds")
    })
}
