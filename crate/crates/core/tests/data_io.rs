mod common;

use muffin::data::synth;
use muffin::data::{generate_synthetic, split_dataset, Dataset, ModelPool};
use muffin::metrics::{accuracy, disagreement_breakdown};
use muffin::Error;

#[test]
fn dataset_and_pool_round_trip_through_files() {
    let (ds, pool) = generate_synthetic(&synth::preset_complementary_2attr(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (d, s, m) = (dir.path().join("dataset.csv"), dir.path().join("schema.json"), dir.path().join("pool.json"));
    ds.write(&d, &s).unwrap();
    let files = pool.write(&ds, &m).unwrap();
    assert_eq!(files.len(), 3);
    assert_eq!(files.last().unwrap(), &m);

    let ds2 = Dataset::load(&d, &s).unwrap();
    assert_eq!(ds2, ds);
    let pool2 = ModelPool::load_manifest(&m, &ds2).unwrap();
    assert_eq!(pool2.names(), pool.names());
    for (a, b) in pool.entries.iter().zip(&pool2.entries) {
        for i in 0..ds.len() {
            assert_eq!(a.row(i), b.row(i), "row {i} of {}", a.name);
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let cfg = synth::preset_complementary_2attr();
    let (a, pa) = generate_synthetic(&cfg, 11).unwrap();
    let (b, pb) = generate_synthetic(&cfg, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(pa.entries[0].to_csv(&a).unwrap(), pb.entries[0].to_csv(&b).unwrap());
    let (c, _) = generate_synthetic(&cfg, 12).unwrap();
    assert_ne!(a, c);
}

#[test]
fn generated_accuracies_follow_targets() {
    let cfg = synth::preset_complementary_2attr();
    for seed in 0..5 {
        let (ds, pool) = generate_synthetic(&cfg, seed).unwrap();
        let labels = ds.labels();
        let all = ds.all_indices();
        for (j, model) in cfg.models.iter().enumerate() {
            let preds = pool.entries[j].predictions(&all);
            for (attr, targets) in &model.accuracy {
                let k = ds.schema.attribute_index(attr).unwrap();
                for (group, &want) in targets {
                    let g = ds.schema.attributes[k].group_index(group).unwrap();
                    let members = ds.members(k, g, &all);
                    let got = accuracy(&preds, &labels, Some(&members)).unwrap();
                    assert!((got - want).abs() < 0.02, "seed {seed} {} {attr}={group}: {got} vs {want}", model.name);
                }
            }
        }
    }
}

#[test]
fn paired_models_are_complementary_on_designated_groups() {
    let cfg = synth::preset_complementary_2attr();
    for seed in 0..5 {
        let (ds, pool) = generate_synthetic(&cfg, seed).unwrap();
        let labels = ds.labels();
        let all = ds.all_indices();
        let a = pool.entries[0].predictions(&all);
        let b = pool.entries[1].predictions(&all);
        let designated: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| {
                cfg.unprivileged.iter().any(|r| {
                    let k = ds.schema.attribute_index(&r.attribute).unwrap();
                    ds.schema.attributes[k].groups[ds.samples[i].groups[k]] == r.group
                })
            })
            .collect();
        let bd = disagreement_breakdown(&a, &b, &labels, &designated).unwrap();
        let rate = bd.only_a + bd.only_b;
        assert!((rate - 0.30).abs() < 0.02, "seed {seed}: complementarity {rate}");
    }
}

#[test]
fn impossible_complementarity_is_infeasible() {
    let mut cfg = synth::preset_complementary_2attr();
    cfg.complementarity = 1.2;
    let err = generate_synthetic(&cfg, 0).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
    assert_eq!(err.exit_code(), 2);
    // above min(a+b, 2-a-b) on the old/hand cells
    cfg.complementarity = 0.9;
    assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Infeasible(_))));
}

#[test]
fn splits_partition_the_dataset() {
    let (ds, _) = generate_synthetic(&synth::preset_complementary_2attr(), 0).unwrap();
    let s = split_dataset(&ds, 4).unwrap();
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, ds.all_indices());
    assert_eq!(split_dataset(&ds, 4).unwrap(), s);
    assert_ne!(split_dataset(&ds, 5).unwrap().train, s.train);
}

#[test]
fn malformed_files_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = generate_synthetic(&synth::preset_uniform_fair(), 0).unwrap();
    let (d, s) = (dir.path().join("dataset.csv"), dir.path().join("schema.json"));
    ds.write(&d, &s).unwrap();
    let text = std::fs::read_to_string(&d).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[3] = lines[3].replacen(',', ",bogus-label-", 1);
    std::fs::write(&d, lines.join("\n")).unwrap();
    match Dataset::load(&d, &s) {
        Err(Error::Load { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected load error, got {other:?}"),
    }
}
