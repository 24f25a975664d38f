mod common;

use kadapt::numeric::{Graph, ParamSet};
use kadapt::objectives::{infonce, infonce_graph, sample_ep_batch, sample_es_batch, sample_tp_batch, sample_ts_batch, KnowledgeSource};
use kadapt::seed::rng_for;
use proptest::prelude::*;

fn rows(b: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-2.0f32..2.0, d), b)
        .prop_filter("non-zero rows", |rs| rs.iter().all(|r| r.iter().map(|x| x * x).sum::<f32>() > 1e-3))
}

fn graph_loss(a: &[Vec<f32>], p: &[Vec<f32>], tau: f64) -> f64 {
    let empty = ParamSet::new();
    let mut g = Graph::<f64>::new(&empty);
    let (b, d) = (a.len(), a[0].len());
    let flat = |x: &[Vec<f32>]| x.concat().into_iter().map(f64::from).collect::<Vec<_>>();
    let av = g.constant(vec![b, d], flat(a)).unwrap();
    let pv = g.constant(vec![b, d], flat(p)).unwrap();
    let loss = infonce_graph(&mut g, av, pv, tau).unwrap();
    g.scalar_value(loss)
}

proptest! {
    #[test]
    fn graph_matches_reference((a, p) in (1usize..6).prop_flat_map(|b| (rows(b, 5), rows(b, 5))), tau in 0.05f64..2.0) {
        let reference = infonce(&a, &p, tau).unwrap();
        let graph = graph_loss(&a, &p, tau);
        prop_assert!((reference - graph).abs() < 1e-4 * reference.abs().max(1.0), "{} vs {}", reference, graph);
    }

    #[test]
    fn joint_shuffle_leaves_loss_unchanged((a, p) in rows(5, 4).prop_flat_map(|a| (Just(a), rows(5, 4))), shift in 1usize..5) {
        let rot = |x: &[Vec<f32>]| { let mut y = x.to_vec(); y.rotate_left(shift); y };
        let before = infonce(&a, &p, 0.5).unwrap();
        let after = infonce(&rot(&a), &rot(&p), 0.5).unwrap();
        prop_assert!((before - after).abs() < 1e-9);
        prop_assert!(before >= 0.0);
    }
}

#[test]
fn identical_orthogonal_pairs_sharpen_with_lower_temperature() {
    let eye: Vec<Vec<f32>> = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let warm = infonce(&eye, &eye, 1.0).unwrap();
    let cold = infonce(&eye, &eye, 0.1).unwrap();
    assert!((warm - (1.0 + 2.0 * (-1.0f64).exp()).ln()).abs() < 1e-9);
    assert!(cold < warm && cold < 1e-3);
    assert!(infonce(&eye, &eye[..2], 1.0).is_err());
    assert!(infonce(&eye, &eye, 0.0).is_err());
    assert!(infonce(&[vec![f32::NAN, 0.0]], &[vec![1.0, 0.0]], 1.0).is_err());
}

#[test]
fn every_sampler_stays_within_adapter_languages() {
    let t = common::tiny(1, 8, 3);
    let allowed = t.data.split.adapter_languages();
    let mut rng = rng_for(3, "samplers");
    for _ in 0..20 {
        let batches = [
            sample_ep_batch(&t.source, 8, &mut rng).unwrap(),
            sample_tp_batch(&t.source, 8, 0.5, &mut rng).unwrap(),
            sample_es_batch(&t.source, 8, &mut rng).unwrap(),
            sample_ts_batch(&t.source, 8, &mut rng).unwrap(),
        ];
        for pair in batches.iter().flatten() {
            assert!(pair.anchor.langs.iter().chain(&pair.positive.langs).all(|l| allowed.contains(l)), "{pair:?}");
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let t = common::tiny(1, 8, 3);
    let draw = |seed| sample_tp_batch(&t.source, 8, 0.5, &mut rng_for(seed, "tp")).unwrap();
    assert_eq!(draw(1), draw(1));
    assert_ne!(draw(1), draw(2));
}

#[test]
fn empty_language_list_is_rejected() {
    let t = common::tiny(1, 8, 3);
    assert!(KnowledgeSource::new(&t.data.kg, &t.data.c1, &t.data.c2, &[]).is_err());
}
