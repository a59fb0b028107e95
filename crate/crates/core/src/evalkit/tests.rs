use super::*;
use crate::datakit::{generate_pool, Dataset};
use crate::netlib::{ArchConfig, Preset};
use crate::runconfig::RunConfig;

fn tiny() -> (Dataset, RunConfig) {
    let pool = generate_pool([30, 24], 32, 4).unwrap();
    let ds = Dataset::from_pool(&pool, 5).unwrap();
    let mut run = RunConfig::default();
    run.preset = Preset::Tiny;
    run.batch_size = 8;
    run.pair_n = 16;
    run.epochs = 1;
    (ds, run)
}

#[test]
fn grid_has_one_row_per_cell() {
    let (ds, run) = tiny();
    let rows = grid_search(&ds, &run, &[1e-2, 1.0], &[1e-3], 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.acc_hk)));
    let csv = grid_csv(&rows);
    assert!(csv.starts_with("lambda1,lambda2,acc_hK,acc_hU\n"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(decade_grid().len() * decade_grid().len(), 36);
}

#[test]
fn best_cell_skips_nan() {
    let r = |l1, acc| GridRow { lambda1: l1, lambda2: 1.0, acc_hk: acc, acc_hu: 0.5 };
    let rows = [r(1.0, f64::NAN), r(2.0, 0.7), r(3.0, 0.9), r(4.0, 0.9)];
    assert_eq!(best_cell(&rows).unwrap().lambda1, 3.0);
    assert!(best_cell(&[r(1.0, f64::NAN)]).is_none());
}

#[test]
fn sizes_rows() {
    let (ds, run) = tiny();
    let rows = sample_size_study(&ds, &run, &[8, 16], &[1]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(sizes_csv(&rows).lines().count(), 3);
    assert!(sample_size_study(&ds, &run, &[1_000_000], &[1]).is_err());
}

#[test]
fn augmentation_table_shape() {
    let (ds, run) = tiny();
    let mut model = crate::netlib::KeCae::new(&run.arch(), 1).unwrap();
    let cfg = AugmentConfigEval {
        classifiers: ClassifierKind::ALL.to_vec(),
        input_sets: InputSet::ALL.to_vec(),
        seeds: vec![1],
        epochs: 1,
        synth_pairs: 6,
        arch: ArchConfig::tiny(),
    };
    let rows = augmentation_eval(&mut model, &ds, &cfg).unwrap();
    assert_eq!(rows.len(), 8);
    let summary = augment_summary_csv(&rows);
    assert_eq!(summary.lines().count(), 1 + 4 * 2);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.acc)));
}

#[test]
fn classifier_learns_gap_width() {
    let pool = generate_pool([60, 60], 32, 8).unwrap();
    let mut imgs = Vec::new();
    let mut labels = Vec::new();
    for (g, set) in [(0, &pool.kl0), (1, &pool.kl2)] {
        for r in set.iter() {
            imgs.extend_from_slice(&r.pixels);
            labels.push(g);
        }
    }
    let x = crate::diffcore::Tensor::new(vec![120, 1, 32, 32], imgs).unwrap();
    for kind in ClassifierKind::ALL {
        let mut c = Classifier::new(kind, &ArchConfig::tiny(), 3).unwrap();
        c.fit(&x, &labels, 8, 3).unwrap();
        let acc = c.accuracy(&x, &labels).unwrap();
        assert!(acc > 0.9, "{kind}: {acc}");
    }
}

#[test]
fn held_out_pairs_cover_classes() {
    let (ds, _) = tiny();
    let p = held_out_pairs(&ds.test, 20);
    assert_eq!(p.len(), 20);
    assert!(p.iter().all(|q| q.kl0 < ds.test.kl0.len() && q.kl2 < ds.test.kl2.len()));
    let uniq: std::collections::HashSet<_> = p.iter().collect();
    assert_eq!(uniq.len(), 20);
}

#[test]
fn exchange_scores_count_pairs() {
    let (ds, run) = tiny();
    let mut model = crate::netlib::KeCae::new(&run.arch(), 1).unwrap();
    let p = held_out_pairs(&ds.test, 5);
    let s = exchange_semantics(&mut model, &ds.test, &p).unwrap();
    assert_eq!(s.pairs, 5);
    assert!(s.closer <= 5);
}
