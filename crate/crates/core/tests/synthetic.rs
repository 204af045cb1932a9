//! Generator output on disk and through the feature extractor.

use skdan_core::datapipe::{
    load_domain, normalize_domain, read_dataset, write_dataset, PipelineConfig,
};
use skdan_core::losses::{mk_mmd_with, BankSpec};
use skdan_core::model::{ModelConfig, SkdanModel};
use skdan_core::predictor::PredictorConfig;
use skdan_core::sad::SadConfig;
use skdan_core::synthgen::{synth_battery, synth_domain_with, synth_transfer_pair, SynthSpec};

#[test]
fn written_batteries_load_back_into_the_same_domain() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_cycles: 200,
        log_every: 25,
        seed: 8,
        ..SynthSpec::default()
    };
    let prefix = dir.path().join("cell");
    synth_battery(&spec).unwrap().write(&prefix).unwrap();
    let cfg = PipelineConfig {
        window_dod: Some(60.0),
        ..PipelineConfig::default()
    };
    let loaded = normalize_domain(&load_domain(&[prefix], &cfg, true).unwrap()).unwrap();
    let direct = synth_domain_with(&spec, &cfg, 0).unwrap();
    assert_eq!(loaded.len(), direct.len());
    // labels travel as capacities in Ah, so the ratio may move by an ulp
    for (a, b) in loaded
        .labels()
        .unwrap()
        .iter()
        .zip(direct.labels().unwrap())
    {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for (a, b) in loaded.samples.iter().zip(&direct.samples) {
        for c in 0..4 {
            let gap = a
                .channel(c)
                .iter()
                .zip(b.channel(c))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(gap < 1e-9, "channel {c} differs by {gap}");
        }
    }

    let path = dir.path().join("domain.skds");
    write_dataset(&path, &direct).unwrap();
    let first = std::fs::read(&path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), direct);
    write_dataset(&path, &read_dataset(&path).unwrap()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn identical_full_range_specs_have_no_feature_discrepancy() {
    let spec = SynthSpec {
        n_cycles: 200,
        log_every: 20,
        ..SynthSpec::default()
    };
    let pair = synth_transfer_pair(&spec, &spec).unwrap();
    let config = ModelConfig {
        sad: SadConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            ..SadConfig::default()
        },
        predictor: PredictorConfig::default(),
    };
    let model = SkdanModel::init(config, &mut diffcore::rng::stream(1, 0)).unwrap();
    let features = |d: &skdan_core::datapipe::DomainDataset| -> Vec<Vec<f64>> {
        d.inputs()
            .iter()
            .map(|x| model.features(x).unwrap().into_data())
            .collect()
    };
    let mmd = mk_mmd_with(
        &features(&pair.source),
        &features(&pair.target),
        &BankSpec::default(),
    )
    .unwrap();
    assert!(mmd.abs() < 1e-12, "{mmd}");
}
