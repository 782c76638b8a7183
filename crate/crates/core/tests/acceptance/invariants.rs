//! Property checks for every module, driven by a deterministic proptest
//! runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Debug, Display};
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cdst::corpus::{
    char_span_to_token_span, coref_statistics, load_multiwoz, normalize_value, split_of, BeliefState, Dialogue, Split,
    SplitSpec,
};
use cdst::encoding::{
    batch_examples, decode_span_to_text, InputBuilder, InputConfig, SamplingPolicy, Segment, SlotType,
};
use cdst::evaluation::{jga, per_slot_coref_accuracy, slot_accuracy};
use cdst::model::{joint_loss_raw, save_checkpoint, DecodeOptions, GoldLabel, RawHeadOutput, SpanDecoding};
use cdst::testing::{mini_corpus, mini_corpus_dir, word_tokenizer};
use cdst::tracker::{apply_coref, merge_turn, MergePolicy, MergeRule, PredictionFile, PredictionRecord, SlotPrediction};
use cdst::training::{train, LinearWarmupDecay, Sampling, TrainConfig};
use cdst::SlotInventory;

use super::{ensure, oracle, random_mask, tiny_model, Res};

type Check = fn() -> Res<()>;

pub fn run() -> Res<String> {
    let checks: &[(&str, Check)] = &[
        ("corpus: labels round-trip through normalization", label_round_trip),
        ("corpus: char->token span is a minimal superset", span_projection),
        ("corpus: splits partition the corpus", split_partition),
        ("corpus: coref fraction ignores dialogue order", coref_fraction_order),
        ("encoding: utterance segment reconstructs the utterance", segment_reconstruction),
        ("encoding: gold spans decode to label values", label_consistency),
        ("encoding: ablated segments are empty", ablation_structure),
        ("encoding: example streams are deterministic", encoding_determinism),
        ("model: probabilities are normalized", probability_normalization),
        ("model: loss decomposes by beta", loss_decomposition),
        ("model: span decoding equals a brute-force scan", argmax_equivalence),
        ("model: heads are isolated per slot", head_isolation),
        ("model: raising the threshold never adds values", model_threshold_monotonicity),
        ("training: same seed gives identical runs", seed_determinism),
        ("training: schedule starts at 0 and decays", schedule_property),
        ("tracker: merge locality", merge_locality),
        ("tracker: merge idempotence", merge_idempotence),
        ("tracker: merge purity", merge_purity),
        ("tracker: edited slots shrink with threshold", merge_threshold_monotonicity),
        ("evaluation: JGA <= slot accuracy", jga_bounded),
        ("evaluation: JGA ignores slot and dialogue order", jga_order_invariance),
        ("evaluation: correct fills never lower JGA", correct_fills_never_hurt),
        ("evaluation: per-slot counts aggregate to overall accuracy", per_slot_aggregation),
        ("cli: subcommands are idempotent and write only under --out", cli_idempotence),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        if let Err(e) = check() {
            failures.push(format!("{name}: {e}"));
        }
    }
    ensure!(
        failures.is_empty(),
        "{} of {} properties failed: {}",
        failures.len(),
        checks.len(),
        failures.join(" | ")
    );
    Ok(format!("{} properties", checks.len()))
}

fn prop<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Res<()>
where
    S: Strategy,
    S::Value: Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string().into())
}

fn tc<T, E: Display>(r: Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

fn inv() -> SlotInventory {
    SlotInventory::multiwoz()
}

fn builder(dialogues: &[Dialogue], config: InputConfig) -> Res<InputBuilder> {
    let inv = inv();
    Ok(InputBuilder::new(word_tokenizer(dialogues, &inv)?, inv, config)?)
}

fn label_round_trip() -> Res<()> {
    let inv = inv();
    let mut n = 0;
    for d in mini_corpus()? {
        for (i, t) in d.turns.iter().enumerate() {
            ensure!(t.turn_index == i, "{} turn indices not consecutive", d.dialogue_id);
            for l in &t.coref_labels {
                ensure!(inv.contains(&l.slot), "unknown slot {}", l.slot);
                ensure!(l.char_start < l.char_end, "empty antecedent");
                ensure!(l.source_turn <= t.turn_index, "antecedent after the labeled turn");
                let text = d.turns[l.source_turn].utterance(l.source_speaker);
                let got = normalize_value(&text[l.char_start..l.char_end]);
                ensure!(got == l.value, "`{got}` != `{}`", l.value);
                n += 1;
            }
        }
    }
    ensure!(n == 5, "expected 5 fixture labels, saw {n}");
    Ok(())
}

fn span_projection() -> Res<()> {
    let dialogues = mini_corpus()?;
    let tok = word_tokenizer(&dialogues, &inv())?;
    let texts: Vec<String> = dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .flat_map(|t| [t.user_utterance.clone(), t.system_utterance.clone()])
        .filter(|t| !t.is_empty())
        .collect();
    prop(256, (0..texts.len(), 0.0..1.0f64, 0.0..1.0f64), |(i, a, b)| {
        let text = &texts[i];
        let x = (a * text.len() as f64) as usize;
        let y = (b * text.len() as f64) as usize + 1;
        let (cs, ce) = (x.min(y), x.max(y).min(text.len()));
        prop_assume!(cs < ce && text.is_char_boundary(cs) && text.is_char_boundary(ce));
        let offsets: Vec<(usize, usize)> = tc(tok.tokenize(text))?.iter().map(|t| (t.start, t.end)).collect();
        let overlapping: Vec<usize> = (0..offsets.len())
            .filter(|&k| offsets[k].0 < ce && offsets[k].1 > cs)
            .collect();
        let got = char_span_to_token_span(text, cs, ce, &offsets);
        if overlapping.is_empty() {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let (f, l) = tc(got)?;
        prop_assert_eq!((f, l), (overlapping[0], *overlapping.last().unwrap()));
        // Every covered non-blank byte of the input lies inside the result.
        for p in cs..ce {
            let covered = offsets.iter().any(|&(s, e)| s <= p && p < e);
            if covered && !text.as_bytes()[p].is_ascii_whitespace() {
                prop_assert!(offsets[f].0 <= p && p < offsets[l].1);
            }
        }
        // Dropping either end token would lose part of the input.
        prop_assert!(offsets[f].1 > cs && offsets[l].0 < ce);
        Ok(())
    })
}

fn split_partition() -> Res<()> {
    let three = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/multiwoz_three");
    let (three, _) = load_multiwoz(&three, &SplitSpec::in_dir(&three), &inv())?;
    for corpus in [mini_corpus()?, three] {
        let mut seen = BTreeSet::new();
        let mut total = 0;
        for split in Split::ALL {
            let part = split_of(&corpus, split);
            let ids: BTreeSet<&str> = part.iter().map(|d| d.dialogue_id.as_str()).collect();
            ensure!(ids.len() == part.len(), "duplicate dialogue id in {split}");
            for d in &part {
                ensure!(seen.insert(d.dialogue_id.clone()), "{} in two splits", d.dialogue_id);
            }
            total += part.len();
        }
        ensure!(total == corpus.len(), "split sizes sum to {total}, corpus has {}", corpus.len());
    }
    Ok(())
}

fn coref_fraction_order() -> Res<()> {
    let dialogues = mini_corpus()?;
    let reference = coref_statistics(&dialogues);
    prop(32, Just(dialogues).prop_shuffle(), |shuffled| {
        prop_assert_eq!(coref_statistics(&shuffled), reference.clone());
        Ok(())
    })
}

fn segment_reconstruction() -> Res<()> {
    let dialogues = mini_corpus()?;
    let b = builder(&dialogues, InputConfig::default())?;
    for d in &dialogues {
        for t in &d.turns {
            for slot in ["hotel-area", "train-day", "taxi-destination"] {
                let ex = b.build(d, t.turn_index, slot)?;
                let utt: Vec<usize> = (0..ex.len()).filter(|&i| ex.segment_ids[i] == Segment::Utterance).collect();
                let (Some(&first), Some(&last)) = (utt.first(), utt.last()) else {
                    ensure!(t.user_utterance.trim().is_empty(), "no utterance tokens");
                    continue;
                };
                let a = ex.token_char_map[first].ok_or("utterance token without origin")?;
                let z = ex.token_char_map[last].ok_or("utterance token without origin")?;
                ensure!(
                    ex.sources[a.source].text[a.start..z.end] == t.user_utterance,
                    "{} turn {}: utterance segment differs",
                    d.dialogue_id,
                    t.turn_index
                );
            }
        }
    }
    Ok(())
}

fn label_consistency() -> Res<()> {
    let dialogues = mini_corpus()?;
    let b = builder(&dialogues, InputConfig::default())?;
    let mut spans = 0;
    for ex in batch_examples(&dialogues, &b, SamplingPolicy::All) {
        let ex = ex?;
        ensure!(
            ex.gold_span.is_some() == (ex.gold_slot_type == SlotType::Coref),
            "span presence disagrees with slot type"
        );
        if let Some((s, e)) = ex.gold_span {
            for p in [s, e] {
                ensure!(
                    matches!(ex.segment_ids[p], Segment::Utterance | Segment::Context),
                    "gold span on a {:?} token",
                    ex.segment_ids[p]
                );
            }
            let text = decode_span_to_text(&ex, s, e)?;
            let label = dialogues
                .iter()
                .find(|d| d.dialogue_id == ex.dialogue_id)
                .and_then(|d| d.turns[ex.turn_index].coref_labels.iter().find(|l| l.slot == ex.slot))
                .ok_or("label missing")?;
            ensure!(text == label.value, "decoded `{text}`, label `{}`", label.value);
            spans += 1;
        }
    }
    ensure!(spans == 5, "expected 5 spans, saw {spans}");
    Ok(())
}

fn ablation_structure() -> Res<()> {
    let dialogues = mini_corpus()?;
    let inv = inv();
    let tok = word_tokenizer(&dialogues, &inv)?;
    let sep = tok.special().sep;
    let cls = tok.special().cls;
    let mut builders = BTreeMap::new();
    for utt in [false, true] {
        for slot in [false, true] {
            let config = InputConfig {
                include_utterance: utt,
                include_slot: slot,
                ..InputConfig::default()
            };
            builders.insert((utt, slot), InputBuilder::new(tok.clone(), inv.clone(), config)?);
        }
    }
    prop(
        128,
        (any::<bool>(), any::<bool>(), 0..dialogues.len(), 0..64usize, 0..inv.len()),
        |(utt, slot, d, t, s)| {
            let d = &dialogues[d];
            let ex = tc(builders[&(utt, slot)].build(d, t % d.turns.len(), &inv.slots()[s].name()))?;
            prop_assert_eq!(ex.tokens[0], cls);
            if !slot {
                prop_assert_eq!(ex.segment_len(Segment::Slot), 0);
            }
            if !utt {
                prop_assert_eq!(ex.segment_len(Segment::Utterance), 0);
            }
            prop_assert_eq!(ex.separator_count(sep), 3 - usize::from(!utt) - usize::from(!slot));
            Ok(())
        },
    )
}

fn encoding_determinism() -> Res<()> {
    let dialogues = mini_corpus()?;
    let stream = || -> Res<String> {
        let b = builder(&dialogues, InputConfig::default())?;
        let policy = SamplingPolicy::Balanced {
            negatives_per_positive: 3,
            seed: 11,
        };
        let mut out = String::new();
        for ex in batch_examples(&dialogues, &b, policy) {
            out.push_str(&serde_json::to_string(&ex?)?);
            out.push('\n');
        }
        Ok(out)
    };
    ensure!(stream()? == stream()?, "example streams differ");
    Ok(())
}

fn probability_normalization() -> Res<()> {
    let dist_ok = |v: &[f64]| v.iter().all(|&p| p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-5;
    prop(200, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..5);
        let d = rng.random_range(1..10);
        let heads = oracle::Heads::random(&mut rng, n, d, 3.0).build();
        let slot = rng.random_range(0..n);
        let cls: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (a, b) = tc(heads.classify_slot_type(&cls, slot))?;
        prop_assert!(dist_ok(&[a, b]));
        let m = rng.random_range(1..30);
        let tokens: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let mask = random_mask(&mut rng, m);
        let span = tc(heads.predict_span(&tokens, slot, Some(&mask), SpanDecoding::Independent, 10))?;
        prop_assert!(dist_ok(&span.start_dist) && dist_ok(&span.end_dist));
        for (i, &ok) in mask.iter().enumerate() {
            prop_assert!(ok || (span.start_dist[i] == 0.0 && span.end_dist[i] == 0.0));
        }
        Ok(())
    })?;
    let dialogues = mini_corpus()?;
    let model = tiny_model(&dialogues, 3)?;
    for d in dialogues.iter().take(2) {
        for t in &d.turns {
            for p in model.predict_turn(d, t.turn_index)?.values() {
                ensure!((0.0..=1.0).contains(&p.p_coref), "p_coref {}", p.p_coref);
                ensure!(dist_ok(&p.start_dist) && dist_ok(&p.end_dist), "model distribution not normalized");
                if p.value != "none" {
                    ensure!(p.p_coref >= 0.5 && p.span.0 <= p.span.1, "value emitted without coref decision");
                }
            }
        }
    }
    Ok(())
}

fn random_batch(rng: &mut impl Rng) -> (Vec<RawHeadOutput>, Vec<GoldLabel>) {
    let b = rng.random_range(1..6);
    let mut raw = Vec::new();
    let mut gold = Vec::new();
    for _ in 0..b {
        let m = rng.random_range(1..15);
        let allowed = random_mask(rng, m);
        let coref = rng.random_bool(0.5);
        let candidates: Vec<usize> = (0..m).filter(|&i| allowed[i]).collect();
        let span = coref.then(|| {
            let s = candidates[rng.random_range(0..candidates.len())];
            let e = candidates[rng.random_range(0..candidates.len())];
            (s.min(e), s.max(e))
        });
        raw.push(RawHeadOutput {
            slot_type_logits: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            start_logits: (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
            end_logits: (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
            allowed: Some(allowed),
        });
        gold.push(GoldLabel {
            slot_type: if coref { SlotType::Coref } else { SlotType::None },
            span,
        });
    }
    (raw, gold)
}

fn loss_decomposition() -> Res<()> {
    prop(200, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (raw, gold) = random_batch(&mut rng);
        let beta = rng.random_range(0.0..=1.0);
        let l = tc(joint_loss_raw(&raw, &gold, beta))?;
        prop_assert!((l.total - (beta * l.slot_type_loss + (1.0 - beta) * l.span_loss)).abs() <= 1e-6);

        let mut span_moved = raw.clone();
        for r in &mut span_moved {
            for x in r.start_logits.iter_mut().chain(r.end_logits.iter_mut()) {
                *x += rng.random_range(-2.0..2.0);
            }
        }
        let a = tc(joint_loss_raw(&raw, &gold, 1.0))?.total;
        let b = tc(joint_loss_raw(&span_moved, &gold, 1.0))?.total;
        prop_assert!((a - b).abs() <= 1e-12, "beta=1 depends on span logits");

        let mut class_moved = raw.clone();
        for r in &mut class_moved {
            r.slot_type_logits[0] += rng.random_range(-2.0..2.0);
        }
        let a = tc(joint_loss_raw(&raw, &gold, 0.0))?.total;
        let b = tc(joint_loss_raw(&class_moved, &gold, 0.0))?.total;
        prop_assert!((a - b).abs() <= 1e-12, "beta=0 depends on slot-type logits");
        Ok(())
    })
}

fn argmax_equivalence() -> Res<()> {
    prop(200, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..8);
        let heads = oracle::Heads::random(&mut rng, 1, d, 2.0);
        let m = rng.random_range(1..50);
        let tokens: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mask = random_mask(&mut rng, m);
        let (start, end) = heads.span_logits(0, &tokens);
        let got = tc(heads.build().predict_span(&tokens, 0, Some(&mask), SpanDecoding::Independent, 10))?;
        // On logits: softmax is monotone, so the scan can skip it.
        prop_assert_eq!(got.span, (oracle::scan_argmax(&start, &mask), oracle::scan_argmax(&end, &mask)));
        Ok(())
    })
}

fn head_isolation() -> Res<()> {
    prop(100, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..6);
        let d = rng.random_range(1..8);
        let heads = oracle::Heads::random(&mut rng, n, d, 2.0);
        let m = rng.random_range(0..n);
        let other = (m + rng.random_range(1..n)) % n;
        let mut moved = heads.clone();
        for k in other * d * 2..(other + 1) * d * 2 {
            moved.cls_w[k] += rng.random_range(-5.0..5.0);
            moved.span_w[k] += rng.random_range(-5.0..5.0);
        }
        for k in other * 2..other * 2 + 2 {
            moved.cls_b[k] += rng.random_range(-5.0..5.0);
            moved.span_b[k] += rng.random_range(-5.0..5.0);
        }
        let cls: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tokens: Vec<Vec<f64>> = (0..12).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let (a, b) = (heads.build(), moved.build());
        prop_assert_eq!(tc(a.classify_slot_type(&cls, m))?, tc(b.classify_slot_type(&cls, m))?);
        prop_assert_eq!(
            tc(a.predict_span(&tokens, m, None, SpanDecoding::Independent, 10))?,
            tc(b.predict_span(&tokens, m, None, SpanDecoding::Independent, 10))?
        );
        Ok(())
    })
}

fn model_threshold_monotonicity() -> Res<()> {
    let dialogues = mini_corpus()?;
    let mut model = tiny_model(&dialogues, 5)?;
    let mut previous: Option<BTreeSet<(String, usize, String)>> = None;
    for threshold in [0.0, 0.25, 0.45, 0.5, 0.55, 0.75, 1.01] {
        model.set_decode_options(DecodeOptions {
            threshold,
            ..DecodeOptions::default()
        });
        let mut filled = BTreeSet::new();
        for d in dialogues.iter().take(2) {
            for t in &d.turns {
                for (slot, p) in model.predict_turn(d, t.turn_index)? {
                    if p.value != "none" {
                        filled.insert((d.dialogue_id.clone(), t.turn_index, slot));
                    }
                }
            }
        }
        if let Some(prev) = &previous {
            ensure!(filled.is_subset(prev), "threshold {threshold} added values");
        }
        previous = Some(filled);
    }
    Ok(())
}

fn seed_determinism() -> Res<()> {
    let dialogues = mini_corpus()?;
    let config = TrainConfig {
        learning_rate: 5e-3,
        max_seq_length: 128,
        epochs: 2,
        seed: 13,
        sampling: Sampling::Balanced {
            negatives_per_positive: 2,
        },
        max_steps: Some(12),
        dtype: "f64".into(),
        ..TrainConfig::default()
    };
    let run = || -> Res<(String, Vec<Vec<u8>>)> {
        let inv = inv();
        let tok = word_tokenizer(&dialogues, &inv)?;
        let out = train(&dialogues, &dialogues, tok, inv, &config)?;
        let dir = tempfile::tempdir()?;
        save_checkpoint(&out.model, dir.path(), config.beta, Some(config.hash()))?;
        let mut files = Vec::new();
        for f in ["manifest.json", "vocab.txt", "model.safetensors"] {
            files.push(std::fs::read(dir.path().join(f))?);
        }
        Ok((serde_json::to_string(&out.report)?, files))
    };
    let (a, b) = (run()?, run()?);
    ensure!(a.0 == b.0, "train reports differ");
    ensure!(a.1 == b.1, "checkpoints differ");
    Ok(())
}

fn schedule_property() -> Res<()> {
    prop(512, (1e-6..1.0f64, 0.0..0.5f64, 1usize..5000), |(peak, ratio, total)| {
        let s = LinearWarmupDecay::new(peak, ratio, total);
        if s.warmup_steps > 0 {
            prop_assert_eq!(s.lr(0), 0.0);
        }
        prop_assert!(s.lr(total) <= peak / 100.0);
        if total - s.warmup_steps >= 100 {
            prop_assert!(s.lr(total - 1) <= peak / 100.0 + 1e-15);
        }
        for step in [0, total / 3, total / 2, total.saturating_sub(1)] {
            let lr = s.lr(step);
            prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
        }
        Ok(())
    })
}

const SLOTS: [&str; 6] = ["hotel-area", "train-day", "taxi-departure", "restaurant-food", "hotel-name", "taxi-destination"];
const VALUES: [&str; 5] = ["none", "north", "saturday", "italian", "acorn guest house"];

fn arb_state() -> impl Strategy<Value = BeliefState> {
    proptest::collection::vec((0..SLOTS.len(), 0..VALUES.len()), 0..6).prop_map(|pairs| {
        let mut s = BeliefState::empty(&inv());
        for (a, b) in pairs {
            s.set(SLOTS[a], VALUES[b]);
        }
        s
    })
}

fn arb_preds() -> impl Strategy<Value = BTreeMap<String, SlotPrediction>> {
    proptest::collection::btree_map(
        (0..SLOTS.len()).prop_map(|i| SLOTS[i].to_string()),
        (0.0..1.0f64, 0..VALUES.len()).prop_map(|(p, v)| SlotPrediction {
            p_coref: p,
            span: None,
            value: VALUES[v].into(),
        }),
        0..SLOTS.len(),
    )
}

fn arb_rule() -> impl Strategy<Value = MergeRule> {
    (any::<bool>(), 0.0..1.0f64).prop_map(|(o, threshold)| MergeRule {
        policy: if o { MergePolicy::CorefOverridesBase } else { MergePolicy::CorefFillsEmptyOnly },
        threshold,
    })
}

fn merge_locality() -> Res<()> {
    let inv = inv();
    prop(256, (arb_state(), arb_preds(), arb_rule()), |(base, preds, rule)| {
        let merged = tc(apply_coref(&base, &preds, rule, &inv))?;
        for slot in inv.names() {
            if !preds.get(&slot).is_some_and(|p| p.qualifies(rule.threshold)) {
                prop_assert_eq!(merged.get(&slot), base.get(&slot));
            }
        }
        Ok(())
    })
}

fn merge_idempotence() -> Res<()> {
    let inv = inv();
    prop(256, (arb_state(), arb_preds(), arb_rule()), |(base, preds, rule)| {
        let once = tc(apply_coref(&base, &preds, rule, &inv))?;
        let twice = tc(apply_coref(&once, &preds, rule, &inv))?;
        prop_assert_eq!(once, twice);
        Ok(())
    })
}

fn merge_purity() -> Res<()> {
    let inv = inv();
    prop(128, (arb_state(), arb_preds(), arb_rule()), |(base, preds, rule)| {
        let (b0, p0) = (base.clone(), preds.clone());
        tc(merge_turn(&base, &preds, rule, &inv))?;
        tc(apply_coref(&base, &preds, rule, &inv))?;
        prop_assert_eq!(base, b0);
        prop_assert_eq!(preds, p0);
        Ok(())
    })
}

fn merge_threshold_monotonicity() -> Res<()> {
    let inv = inv();
    prop(256, (arb_state(), arb_preds(), arb_rule(), 0.0..1.0f64), |(base, preds, rule, t2)| {
        let low = MergeRule {
            threshold: rule.threshold.min(t2),
            ..rule
        };
        let high = MergeRule {
            threshold: rule.threshold.max(t2),
            ..rule
        };
        let a = tc(merge_turn(&base, &preds, low, &inv))?;
        let b = tc(merge_turn(&base, &preds, high, &inv))?;
        let low_set: BTreeSet<&str> = a.edited_slots().collect();
        let high_set: BTreeSet<&str> = b.edited_slots().collect();
        prop_assert!(high_set.is_subset(&low_set));
        Ok(())
    })
}

fn arb_turns() -> impl Strategy<Value = (Vec<BeliefState>, Vec<BeliefState>)> {
    (1usize..6).prop_flat_map(|n| {
        (
            proptest::collection::vec(arb_state(), n),
            proptest::collection::vec(arb_state(), n),
        )
    })
}

fn jga_bounded() -> Res<()> {
    prop(256, arb_turns(), |(pred, gold)| {
        prop_assert!(tc(jga(&pred, &gold))? <= tc(slot_accuracy(&pred, &gold))? + 1e-12);
        Ok(())
    })
}

fn jga_order_invariance() -> Res<()> {
    let strategy = arb_turns().prop_flat_map(|(p, g)| {
        let order: Vec<usize> = (0..p.len()).collect();
        (Just(p), Just(g), Just(order).prop_shuffle())
    });
    prop(256, strategy, |(pred, gold, order)| {
        let base = tc(jga(&pred, &gold))?;
        let p: Vec<BeliefState> = order.iter().map(|&i| pred[i].clone()).collect();
        let g: Vec<BeliefState> = order.iter().map(|&i| gold[i].clone()).collect();
        prop_assert_eq!(tc(jga(&p, &g))?, base);
        // Same states built by inserting slots in the opposite order.
        let reversed: Vec<BeliefState> = pred
            .iter()
            .map(|s| {
                let mut r = BeliefState::default();
                let pairs: Vec<(String, String)> = s.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
                for (a, b) in pairs.into_iter().rev() {
                    r.set(a, b);
                }
                r
            })
            .collect();
        prop_assert_eq!(tc(jga(&reversed, &gold))?, base);
        Ok(())
    })
}

fn correct_fills_never_hurt() -> Res<()> {
    let inv = inv();
    let rule = MergeRule {
        policy: MergePolicy::CorefFillsEmptyOnly,
        threshold: 0.5,
    };
    let strategy = arb_turns().prop_flat_map(|(b, g)| {
        let n = b.len();
        (Just(b), Just(g), proptest::collection::vec(proptest::collection::vec(0..SLOTS.len(), 0..4), n))
    });
    prop(256, strategy, |(base, gold, which)| {
        let merged: Vec<BeliefState> = base
            .iter()
            .zip(&gold)
            .zip(&which)
            .map(|((b, g), slots)| {
                let preds: BTreeMap<String, SlotPrediction> = slots
                    .iter()
                    .map(|&i| {
                        let value = g.get(SLOTS[i]).unwrap_or("none").to_string();
                        (
                            SLOTS[i].to_string(),
                            SlotPrediction {
                                p_coref: 0.9,
                                span: None,
                                value,
                            },
                        )
                    })
                    .collect();
                apply_coref(b, &preds, rule, &inv)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(tc(jga(&merged, &gold))? >= tc(jga(&base, &gold))?);
        Ok(())
    })
}

fn per_slot_aggregation() -> Res<()> {
    let dialogues = mini_corpus()?;
    prop(128, (any::<u64>(), 0.0..1.0f64), |(seed, threshold)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        let (mut correct, mut total) = (0usize, 0usize);
        for d in &dialogues {
            for t in &d.turns {
                if rng.random_bool(0.1) {
                    // No prediction at all for this turn: its labels count as wrong.
                    total += t.coref_labels.len();
                    continue;
                }
                let mut predictions = BTreeMap::new();
                for l in &t.coref_labels {
                    let p: f64 = rng.random_range(0.0..1.0);
                    let right = rng.random_bool(0.6);
                    let value = if right { l.value.to_uppercase() } else { "cambridge".to_string() };
                    total += 1;
                    if p >= threshold && right {
                        correct += 1;
                    }
                    predictions.insert(
                        l.slot.clone(),
                        SlotPrediction {
                            p_coref: p,
                            span: None,
                            value,
                        },
                    );
                }
                records.push(PredictionRecord {
                    dialogue_id: d.dialogue_id.clone(),
                    turn_index: t.turn_index,
                    predictions,
                    manifest_hash: None,
                });
            }
        }
        let file = tc(PredictionFile::from_records(records))?;
        let per_slot = per_slot_coref_accuracy(&file, &dialogues, threshold);
        let (c, n) = per_slot.values().fold((0, 0), |(c, n), s| (c + s.correct, n + s.total));
        prop_assert_eq!((c, n), (correct, total));
        for s in per_slot.values() {
            prop_assert!((s.accuracy - s.correct as f64 / s.total as f64).abs() < 1e-12);
        }
        Ok(())
    })
}

fn snapshot(dir: &Path) -> Res<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir)?.to_path_buf(), std::fs::read(&path)?);
            }
        }
    }
    Ok(out)
}

fn cdst_cmd(args: &[&str]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_cdst"))
        .args(args)
        .env_remove("CDST_DATA_DIR")
        .env("RUST_LOG", "error")
        .output()?;
    ensure!(
        out.status.success(),
        "`cdst {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(())
}

fn cli_idempotence() -> Res<()> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let data = mini_corpus_dir();
    let data_before = snapshot(&data)?;
    let ingested = root.join("ingested");
    let audit = root.join("audit");
    let run = root.join("run");
    let pred = root.join("pred");
    let steps: Vec<(PathBuf, Vec<String>)> = vec![
        (ingested.clone(), vec!["ingest".into(), "--data".into(), s(&data), "--out".into(), s(&ingested)]),
        (audit.clone(), vec!["audit".into(), "--data".into(), s(&ingested), "--out".into(), s(&audit)]),
        (
            run.clone(),
            ["train", "--data", &s(&ingested), "--out", &s(&run), "--max-seq-length", "128", "--max-steps", "3", "--epochs", "1"]
                .map(String::from)
                .to_vec(),
        ),
        (
            pred.clone(),
            ["predict", "--checkpoint", &s(&run.join("checkpoint")), "--data", &s(&ingested), "--split", "test", "--out", &s(&pred)]
                .map(String::from)
                .to_vec(),
        ),
    ];
    for (out_dir, args) in &steps {
        let mut full: Vec<&str> = vec!["--deterministic"];
        full.extend(args.iter().map(String::as_str));
        cdst_cmd(&full)?;
        let first = snapshot(out_dir)?;
        ensure!(!first.is_empty(), "{} wrote nothing", args[0]);
        cdst_cmd(&full)?;
        ensure!(snapshot(out_dir)? == first, "`{}` outputs differ between identical runs", args[0]);
    }
    let mut top: Vec<String> = std::fs::read_dir(root)?
        .map(|e| Ok(e?.file_name().to_string_lossy().into_owned()))
        .collect::<Res<_>>()?;
    top.sort();
    ensure!(top == ["audit", "ingested", "pred", "run"], "unexpected entries {top:?}");
    ensure!(snapshot(&data)? == data_before, "input directory modified");
    Ok(())
}
