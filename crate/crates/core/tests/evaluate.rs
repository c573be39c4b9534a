use std::collections::BTreeSet;

use passage::classifiers::{ClassifierConfig, ClassifierKind};
use passage::evaluate::{fold_plan, losocv, losocv_detailed, report_matrix, Cell, LosoOptions, SelectionMode};
use passage::features::ExtractConfig;
use passage::ingest::{planted_dataset, synth_dataset, PlantedConfig, SynthConfig};
use passage::model::{Dataset, Label};
use passage::pipeline::{assemble, LabelRule, ScalerMethod};
use proptest::prelude::*;

fn dataset(participants: Vec<u32>, seed: u64) -> Dataset {
    let n = participants.len();
    let rows = (0..n).map(|i| vec![(i as f64 * 0.37 + seed as f64).sin(), (i as f64).cos()]).collect();
    let labels = (0..n).map(|i| if i % 2 == 0 { Label::Slow } else { Label::Fast }).collect();
    Dataset::new(vec!["a".into(), "b".into()], rows, labels, participants).unwrap()
}

proptest! {
    #[test]
    fn folds_are_disjoint_and_cover(parts in prop::collection::vec(1u32..9, 4..60), seed in 0u64..100) {
        let d = dataset(parts.clone(), seed);
        let plan = fold_plan(&d);
        let ids: BTreeSet<u32> = parts.iter().copied().collect();
        prop_assert_eq!(plan.len(), ids.len());
        for f in &plan {
            let train: BTreeSet<u32> = f.train.iter().map(|&i| parts[i]).collect();
            let test: BTreeSet<u32> = f.test.iter().map(|&i| parts[i]).collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(test, BTreeSet::from([f.held_out]));
            let all: BTreeSet<u32> = train.union(&BTreeSet::from([f.held_out])).copied().collect();
            prop_assert_eq!(&all, &ids);
        }
    }
}

#[test]
fn manual_subsets_use_canonical_names() {
    let sessions = synth_dataset(&SynthConfig::default()).unwrap();
    let d = assemble(&sessions, LabelRule::default(), &ExtractConfig::default()).unwrap();
    let cfg = ClassifierConfig::new(ClassifierKind::Lr, 0);
    for (mode, n) in [("ppg", 13), ("ppg+eda", 19), ("none", 24)] {
        let m: SelectionMode = mode.parse().unwrap();
        let r = losocv(&d, &cfg, ScalerMethod::MinMax, &m, 0).unwrap();
        for f in &r.per_fold {
            assert_eq!(f.selected_feature_names.len(), n, "{mode}");
        }
    }
}

#[test]
fn mean_is_mean_of_folds_and_shap_is_per_fold() {
    let d = planted_dataset(&PlantedConfig::default());
    let cfg = ClassifierConfig::new(ClassifierKind::Lr, 0);
    let (r, _) = losocv_detailed(&d, &cfg, ScalerMethod::ZScore, &SelectionMode::None, 2, LosoOptions { shap: true, shap_samples: Some(200) }).unwrap();
    let mean = r.per_fold.iter().map(|f| f.accuracy).sum::<f64>() / r.per_fold.len() as f64;
    assert!((mean - r.mean_accuracy).abs() < 1e-12);
    assert!(r.mean_accuracy > 0.75, "{}", r.mean_accuracy);
    assert!(r.per_fold.iter().all(|f| f.per_feature_mean_abs_shap.len() == 24));
}

#[test]
fn adding_classifiers_leaves_cells_unchanged() {
    let d = planted_dataset(&PlantedConfig::default());
    let lr = ClassifierConfig::new(ClassifierKind::Lr, 0);
    let rf = ClassifierConfig::new(ClassifierKind::Rf, 0);
    let modes = [SelectionMode::None];
    let a = report_matrix(&d, &[rf], &modes, ScalerMethod::MinMax, 4).unwrap();
    let b = report_matrix(&d, &[lr, rf], &modes, ScalerMethod::MinMax, 4).unwrap();
    assert_eq!(a.rows[0], b.rows[1]);
    assert!(matches!(b.cell("LR", "none"), Some(Cell::Accuracy(_))));
}

#[test]
fn shuffled_labels_land_near_chance() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let d = planted_dataset(&PlantedConfig::default());
    let mut labels = d.labels().to_vec();
    labels.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
    let d = d.with_labels(labels).unwrap();
    let r = losocv(&d, &ClassifierConfig::new(ClassifierKind::Lda, 0), ScalerMethod::MinMax, &SelectionMode::None, 0).unwrap();
    assert!((0.3..=0.7).contains(&r.mean_accuracy), "{}", r.mean_accuracy);
}
