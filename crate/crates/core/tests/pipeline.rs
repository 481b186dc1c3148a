use comatch_core::corpus::{gen_synthetic, GeneratorSpec};
use comatch_core::fusion::fuse_document;
use comatch_core::matcher::{match_pair, DecisionMode, MatcherRegistry, RelationConfig};
use comatch_core::protoem::{run_naive_em, run_protoem, ProtoEmConfig};
use comatch_core::simulation::experiment::{run_experiment, ExperimentConfig, ExperimentInput, Variant};
use comatch_core::simulation::{
    frobenius_error, machine_decisions, simulate_human_decisions, simulate_machine, HumanSimConfig, MachineSimConfig,
};
use comatch_core::{Error, HumanDecision, SentenceRef, Validate};

fn spec() -> GeneratorSpec {
    GeneratorSpec { pairs: 40, records_per_prototype: 600, ..GeneratorSpec::elam_like() }
}

#[test]
fn em_never_decreases_expected_log_likelihood() {
    let cfg = ProtoEmConfig { smoothing: 0.0, ..ProtoEmConfig::default() };
    for seed in 0..3 {
        let data = gen_synthetic(&spec(), seed).unwrap();
        let out = run_protoem(&data.log, &cfg).unwrap();
        assert_eq!(out.trace.len(), 4 * 40);
        for t in &out.trace {
            assert!(t.ell >= t.ell_before - 1e-9, "seed {seed}: {t:?} fell from {}", t.ell_before);
        }
    }
}

#[test]
fn fitted_model_is_valid_and_beats_pooled() {
    let data = gen_synthetic(&spec(), 2).unwrap();
    let cfg = ProtoEmConfig::default();
    let proto = run_protoem(&data.log, &cfg).unwrap();
    let naive = run_naive_em(&data.log, &cfg).unwrap();
    assert!(proto.model.validate().is_empty());
    assert_eq!(proto.model.prototypes(), 4);
    assert_eq!(naive.model.prototypes(), 1);
    assert_eq!(proto.prototype_sizes.iter().sum::<usize>(), data.log.records.len());
    let truth = data.truth.truth_lookup();
    let ep = frobenius_error(&proto.model, &truth, &data.embeddings).unwrap();
    let en = frobenius_error(&naive.model, &truth, &data.embeddings).unwrap();
    assert!(ep < en, "proto {ep} naive {en}");
}

#[test]
fn fuse_then_match_a_generated_pair() {
    let data = gen_synthetic(&spec(), 3).unwrap();
    let model = run_protoem(&data.log, &ProtoEmConfig::default()).unwrap().model;
    let pair = &data.pairs[0];
    let mut fused = Vec::new();
    for (d, doc) in pair.documents().into_iter().enumerate() {
        let labels = doc.labels().unwrap();
        let refs: Vec<SentenceRef> = doc.refs().collect();
        let m = simulate_machine(&labels, 4, &MachineSimConfig { seed: d as u64, ..Default::default() }).unwrap();
        let machine = machine_decisions(&refs, &m.probs);
        let human = simulate_human_decisions(&refs, &labels, 4, &HumanSimConfig { seed: 9, ..Default::default() })
            .unwrap();
        let f = fuse_document(doc, &machine, &human, &model, &data.embeddings).unwrap();
        assert_eq!(f.len(), doc.len());
        for x in &f {
            assert!((x.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        fused.push(f);
    }
    let cfg = RelationConfig::default();
    let soft = match_pair(pair, &fused[0], &fused[1], &data.embeddings, &cfg).unwrap();
    let hard = match_pair(
        pair,
        &DecisionMode::Argmax.prepare(&fused[0]),
        &DecisionMode::Argmax.prepare(&fused[1]),
        &data.embeddings,
        &cfg,
    )
    .unwrap();
    for o in [soft, hard] {
        assert!((0.0..=1.0).contains(&o.score));
        assert!(o.relation < 3);
    }

    let missing: Vec<HumanDecision> = Vec::new();
    let m = machine_decisions(&pair.source.refs().collect::<Vec<_>>(), &vec![vec![0.25; 4]; pair.source.len()]);
    assert!(matches!(
        fuse_document(&pair.source, &m, &missing, &model, &data.embeddings),
        Err(Error::Completeness(_))
    ));
}

#[test]
fn experiment_is_deterministic_and_complete() {
    let data = gen_synthetic(&GeneratorSpec { pairs: 60, records_per_prototype: 20, ..GeneratorSpec::elam_like() }, 4)
        .unwrap();
    let groups = data.truth.group_map();
    let input = ExperimentInput {
        pairs: &data.pairs,
        embeddings: &data.embeddings,
        categories: &data.truth.category_set,
        groups: Some(&groups),
        group_noise_multipliers: &data.truth.group_noise_multipliers,
    };
    let cfg = ExperimentConfig { noise_rates: vec![0.1, 0.3], seeds: vec![0, 1], ..Default::default() };
    let reg = MatcherRegistry::new();
    let a = run_experiment(&input, &cfg, &reg).unwrap();
    let b = run_experiment(&input, &cfg, &reg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.runs.len(), 2 * 6 * 2);
    assert_eq!(a.cells.len(), 2);
    for cell in &a.cells {
        for v in Variant::ALL {
            assert!(cell.variant(v).is_some());
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("report.csv");
    a.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + a.runs.len());

    let unknown = ExperimentConfig { matcher: "bert-pli".into(), ..cfg };
    assert!(matches!(run_experiment(&input, &unknown, &reg), Err(Error::Config(_))));
}
