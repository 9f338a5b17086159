use super::*;
use crate::autodiff::load_layers;
use crate::sphmath::ShIndexSet;
use crate::vec3::{UnitVector3, Vec3};

fn tiny_field() -> FieldConfig {
    FieldConfig {
        spatial_depth: 2,
        spatial_width: 16,
        directional_depth: 1,
        directional_width: 16,
        pe_levels: 2,
        sh_degrees: ShIndexSet::new(vec![1, 2]).unwrap(),
        bottleneck: 4,
        ..FieldConfig::default()
    }
}

fn tiny_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_rays: 8,
        warmup: 2,
        lr_init: 1e-2,
        lr_final: 1e-3,
        chunk_rays: 3,
        render: RenderSettings {
            samples: 8,
            ..RenderSettings::default()
        },
        ..TrainConfig::default()
    }
}

fn one_ray(color: [f64; 3]) -> TrainingRays {
    let dir = UnitVector3::normalize(Vec3::new(0.0, 0.0, -1.0)).unwrap();
    TrainingRays {
        rays: vec![Ray::new(Vec3::new(0.0, 0.0, 4.0), dir, 2.0, 6.0).unwrap()],
        colors: vec![color],
    }
}

#[test]
fn fifty_steps_reduce_data_loss() {
    let out = train(&one_ray([0.2, 0.6, 0.3]), &tiny_field(), &tiny_train(50), None).unwrap();
    assert_eq!(out.log.len(), 50);
    let (first, last) = (out.log[0].data, out.log[49].data);
    assert!(last < first, "data loss {first} -> {last}");
    assert!(out.checkpoints.is_empty());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 4,
        ..tiny_train(10)
    };
    let data = one_ray([0.9, 0.1, 0.1]);
    let ra = train(&data, &tiny_field(), &cfg, Some(a.path())).unwrap();
    let rb = train(&data, &tiny_field(), &cfg, Some(b.path())).unwrap();
    let names: Vec<_> = ra.checkpoints.iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    assert_eq!(names, ["step_000004.rfld", "step_000008.rfld", "final.rfld"]);
    for (pa, pb) in ra.checkpoints.iter().zip(&rb.checkpoints) {
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
    }
    assert_eq!(ra.params, rb.params);
    let meta = fs::read_to_string(sidecar_path(ra.checkpoints.last().unwrap())).unwrap();
    assert_eq!(meta, format!("config_hash={}\nstep=10\n", config_hash(&tiny_field(), &cfg)));
    let restored = FieldParams::from_layers(&tiny_field(), load_layers(ra.checkpoints.last().unwrap()).unwrap()).unwrap();
    assert_eq!(restored, ra.params);

    let log = fs::read_to_string(a.path().join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LogEntry::HEADER);
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[1].split(' ').count(), 6);

    let other = TrainConfig { seed: 1, ..cfg.clone() };
    assert_ne!(train(&data, &tiny_field(), &other, None).unwrap().params, ra.params);
}

#[test]
fn loss_weights_shape_the_logged_terms() {
    let data = one_ray([0.5; 3]);
    let no_ro = TrainConfig {
        losses: LossWeights {
            lambda_o: 0.0,
            ..LossWeights::default()
        },
        ..tiny_train(3)
    };
    for e in train(&data, &tiny_field(), &no_ro, None).unwrap().log {
        let rp = e.rp.expect("density normals are computed when lambda_p > 0");
        assert!((e.total - (e.data + 3e-4 * rp)).abs() <= 1e-6 * e.total.max(1e-3));
    }
    let plain = TrainConfig {
        losses: LossWeights {
            lambda_o: 0.0,
            lambda_p: 0.0,
            ..LossWeights::default()
        },
        ..tiny_train(3)
    };
    let log = train(&data, &tiny_field(), &plain, None).unwrap().log;
    assert!(log.iter().all(|e| e.rp.is_none() && e.total == e.data));
    assert!(log[0].line().split(' ').nth(2) == Some("-"));
}

#[test]
fn non_finite_loss_reports_step() {
    let err = train(&one_ray([f64::NAN, 0.0, 0.0]), &tiny_field(), &tiny_train(5), None).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }), "{err}");
}

#[test]
fn invalid_configs_rejected() {
    let data = one_ray([0.5; 3]);
    let bad = TrainConfig {
        warmup: 10,
        ..tiny_train(10)
    };
    assert!(train(&data, &tiny_field(), &bad, None).is_err());
    let bad = TrainConfig {
        clip_norm: 0.0,
        ..tiny_train(10)
    };
    assert!(train(&data, &tiny_field(), &bad, None).is_err());
    let empty = TrainingRays {
        rays: vec![],
        colors: vec![],
    };
    assert!(train(&empty, &tiny_field(), &tiny_train(10), None).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = tiny_train(7);
    let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(config_hash(&tiny_field(), &back), config_hash(&tiny_field(), &cfg));
    assert_ne!(config_hash(&tiny_field(), &tiny_train(8)), config_hash(&tiny_field(), &cfg));
}
