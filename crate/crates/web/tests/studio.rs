use strokegan::checkpoint::Checkpoint;
use strokegan::config::SkeganConfig;
use strokegan::model::{Model, TrainedModel};
use strokegan::skegan::{GeneratorConfig, SkeganModel};
use strokegan_web::Studio;

#[test]
fn in_page_training_lowers_the_loss() {
    let mut s = Studio::toy(5).unwrap();
    let first = s.train(1).unwrap();
    let mut last = first;
    for _ in 0..6 {
        last = s.train(25).unwrap();
    }
    assert_eq!(s.iterations(), 151);
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn sample_and_complete_are_seeded() {
    let run = || {
        let mut s = Studio::toy(9).unwrap();
        s.train(10).unwrap();
        (s.sample_svg(6, 3, 0.5).unwrap(), s.complete("[[40,0,0],[0,40,1]]", 0.25).unwrap())
    };
    let (svg, done) = run();
    assert_eq!((svg.clone(), done.clone()), run());
    assert!(svg.contains("width=\"360\" height=\"240\""));
    let pts: Vec<(f64, f64, u8)> = serde_json::from_str(&done).unwrap();
    assert_eq!(pts[..2], [(40.0, 0.0, 0), (0.0, 40.0, 1)]);
    assert!(pts.len() <= 7);
}

#[test]
fn bad_inputs_are_errors() {
    let mut s = Studio::toy(1).unwrap();
    assert!(s.complete("[]", 0.3).is_err());
    assert!(s.complete("nope", 0.3).is_err());
    assert!(s.complete("[[1,1,0]]", 0.0).is_err());
    assert!(s.sample_svg(2, 2, 2.0).is_err());
    assert!(Studio::from_checkpoint(b"not a checkpoint", 0).is_err());
}

#[test]
fn checkpoint_bytes_load() {
    let cfg = SkeganConfig {
        generator: GeneratorConfig { hidden: 8, mixtures: 2, recurrent_dropout: 0.0 },
        disc_hidden: 4,
        ..SkeganConfig::toy()
    };
    let m = TrainedModel { model: Model::Skegan(SkeganModel::new(cfg, 2).unwrap()), n_max: 9, offset_scale: 3.0, category: "box".into() };
    let bytes = Checkpoint::from_model(&m).unwrap().to_bytes().unwrap();
    let mut s = Studio::from_checkpoint(&bytes, 4).unwrap();
    assert_eq!(s.n_max(), 9);
    assert_eq!(s.offset_scale(), 3.0);
    assert!(s.train(1).is_err());
    assert_eq!(s.iterations(), 0);
    s.sample_svg(2, 2, 0.4).unwrap();
}
