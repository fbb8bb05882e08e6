//! Joint and slot accuracy, per-domain breakdowns and the domain-expansion
//! protocol.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, DialogueState};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ontology::{Ontology, SlotKey};
use crate::text::{normalize_value, NOT_MENTIONED};
use crate::trainer::{init_model, train_model, TrainConfig};

fn normalized(state: &DialogueState) -> BTreeSet<(SlotKey, String)> {
    state
        .iter()
        .map(|(k, v)| (k.clone(), normalize_value(v)))
        .filter(|(_, v)| v != NOT_MENTIONED)
        .collect()
}

fn check_aligned(predicted: usize, gold: usize) -> Result<()> {
    if predicted != gold {
        return Err(Error::Alignment(format!("{predicted} predicted turns but {gold} gold turns")));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fraction of turns whose whole state matches.
pub fn joint_accuracy(predicted: &[DialogueState], gold: &[DialogueState]) -> Result<f64> {
    check_aligned(predicted.len(), gold.len())?;
    let hits = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| normalized(p) == normalized(g))
        .count();
    Ok(ratio(hits, gold.len()))
}

fn pair_value(state: &DialogueState, key: &SlotKey) -> String {
    normalize_value(state.value_or_not_mentioned(key))
}

/// Fraction of (turn, ontology pair) cells predicted correctly, counting
/// correct "not mentioned" answers.
pub fn slot_accuracy(predicted: &[DialogueState], gold: &[DialogueState], ontology: &Ontology) -> Result<f64> {
    check_aligned(predicted.len(), gold.len())?;
    let pairs = ontology.pairs();
    let mut hits = 0;
    for (p, g) in predicted.iter().zip(gold) {
        hits += pairs.iter().filter(|k| pair_value(p, k) == pair_value(g, k)).count();
    }
    Ok(ratio(hits, pairs.len() * gold.len()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub joint: f64,
    pub slot: f64,
    pub turns: usize,
    pub dialogues: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub joint: f64,
    pub slot: f64,
    pub per_domain: BTreeMap<String, DomainReport>,
    pub per_slot: BTreeMap<String, f64>,
    pub turns: usize,
    pub dialogues: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn restrict(state: &DialogueState, domain: &str) -> DialogueState {
    let mut s = state.clone();
    s.retain(|k| k.domain == domain);
    s
}

fn flatten_aligned<'a>(
    predicted: &'a [Vec<DialogueState>],
    dialogues: &'a [Dialogue],
) -> Result<(Vec<&'a DialogueState>, Vec<&'a DialogueState>)> {
    check_aligned(predicted.len(), dialogues.len())?;
    let mut p = Vec::new();
    let mut g = Vec::new();
    for (pd, d) in predicted.iter().zip(dialogues) {
        check_aligned(pd.len(), d.turns.len())?;
        p.extend(pd.iter());
        g.extend(d.turns.iter().map(|t| &t.state));
    }
    Ok((p, g))
}

/// Scores restricted to one domain over dialogues that mention it.
pub fn score_domain(
    predicted: &[Vec<DialogueState>],
    dialogues: &[Dialogue],
    ontology: &Ontology,
    domain: &str,
) -> Result<DomainReport> {
    if !ontology.has_domain(domain) {
        return Err(Error::UnknownDomain(domain.to_string()));
    }
    check_aligned(predicted.len(), dialogues.len())?;
    let dom = ontology.restrict_domains(&[domain])?;
    let (mut p, mut g) = (Vec::new(), Vec::new());
    let mut count = 0;
    for (pd, d) in predicted.iter().zip(dialogues) {
        if !d.mentions_domain(domain) {
            continue;
        }
        check_aligned(pd.len(), d.turns.len())?;
        count += 1;
        p.extend(pd.iter().map(|s| restrict(s, domain)));
        g.extend(d.turns.iter().map(|t| restrict(&t.state, domain)));
    }
    Ok(DomainReport {
        joint: joint_accuracy(&p, &g)?,
        slot: slot_accuracy(&p, &g, &dom)?,
        turns: g.len(),
        dialogues: count,
    })
}

/// Overall, per-domain and per-slot scores.
pub fn score(predicted: &[Vec<DialogueState>], dialogues: &[Dialogue], ontology: &Ontology) -> Result<EvalReport> {
    let (p, g) = flatten_aligned(predicted, dialogues)?;
    let p: Vec<DialogueState> = p.into_iter().cloned().collect();
    let g: Vec<DialogueState> = g.into_iter().cloned().collect();
    let mut per_slot = BTreeMap::new();
    for key in ontology.pairs() {
        let hits = p.iter().zip(&g).filter(|(a, b)| pair_value(a, &key) == pair_value(b, &key)).count();
        per_slot.insert(key.to_string(), ratio(hits, g.len()));
    }
    let mut per_domain = BTreeMap::new();
    for d in ontology.domains() {
        per_domain.insert(d.to_string(), score_domain(predicted, dialogues, ontology, d)?);
    }
    Ok(EvalReport {
        joint: joint_accuracy(&p, &g)?,
        slot: slot_accuracy(&p, &g, ontology)?,
        per_domain,
        per_slot,
        turns: g.len(),
        dialogues: dialogues.len(),
        metadata: BTreeMap::new(),
    })
}

/// Gold states restricted to the model's active domains.
fn scoring_view(model: &Model, dialogues: &[Dialogue]) -> Result<(Ontology, Vec<Dialogue>)> {
    match model.active_domains() {
        None => Ok((model.ontology().clone(), dialogues.to_vec())),
        Some(active) => {
            let keep: Vec<&str> = active.iter().map(String::as_str).collect();
            let ontology = model.ontology().restrict_domains(&keep)?;
            let dialogues = dialogues
                .iter()
                .map(|d| {
                    let mut d = d.clone();
                    for t in &mut d.turns {
                        t.state.retain(|k| active.contains(&k.domain));
                    }
                    d
                })
                .collect();
            Ok((ontology, dialogues))
        }
    }
}

/// Predict every dialogue and score against its gold states.
pub fn evaluate_model(model: &Model, dialogues: &[Dialogue]) -> Result<(EvalReport, Vec<Vec<DialogueState>>)> {
    let predicted: Vec<Vec<DialogueState>> = dialogues
        .iter()
        .map(|d| model.predict_dialogue(d))
        .collect::<Result<_>>()?;
    let (ontology, gold) = scoring_view(model, dialogues)?;
    Ok((score(&predicted, &gold, &ontology)?, predicted))
}

/// Evaluation on dialogues mentioning `domain`, scoring only its slots.
pub fn per_domain_eval(dialogues: &[Dialogue], model: &Model, domain: &str) -> Result<EvalReport> {
    if !model.ontology().has_domain(domain) {
        return Err(Error::UnknownDomain(domain.to_string()));
    }
    let selected: Vec<Dialogue> = dialogues.iter().filter(|d| d.mentions_domain(domain)).cloned().collect();
    let predicted: Vec<Vec<DialogueState>> = selected
        .iter()
        .map(|d| model.predict_dialogue(d))
        .collect::<Result<_>>()?;
    let ontology = model.ontology().restrict_domains(&[domain])?;
    let restricted: Vec<Dialogue> = selected
        .iter()
        .map(|d| {
            let mut d = d.clone();
            for t in &mut d.turns {
                t.state.retain(|k| k.domain == domain);
            }
            d
        })
        .collect();
    let predicted: Vec<Vec<DialogueState>> = predicted
        .iter()
        .map(|pd| pd.iter().map(|s| restrict(s, domain)).collect())
        .collect();
    score(&predicted, &restricted, &ontology)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionMode {
    Scratch,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub target: String,
    pub mode: ExpansionMode,
    pub fraction: f64,
    pub seed: u64,
    pub sampled_ids: Vec<String>,
    pub report: EvalReport,
}

/// Indices of a seeded dialogue-level sample of the dialogues mentioning
/// `target`, stratified by dialogue-length quartile. Returned in corpus order.
pub fn sample_dialogues(dialogues: &[Dialogue], target: &str, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut pool: Vec<usize> = (0..dialogues.len()).filter(|&i| dialogues[i].mentions_domain(target)).collect();
    let total = (fraction * pool.len() as f64).round() as usize;
    if total == 0 {
        return Err(Error::EmptySample(format!(
            "{fraction} of {} {target} dialogues is empty",
            pool.len()
        )));
    }
    pool.sort_by_key(|&i| (dialogues[i].turns.len(), i));
    let n = pool.len();
    let strata: Vec<&[usize]> = (0..4).map(|q| &pool[q * n / 4..(q + 1) * n / 4]).collect();
    // largest-remainder allocation of `total` across strata
    let exact: Vec<f64> = strata.iter().map(|s| total as f64 * s.len() as f64 / n as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..4).collect();
    rest.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = total - take.iter().sum::<usize>();
    for q in rest {
        if missing == 0 {
            break;
        }
        if take[q] < strata[q].len() {
            take[q] += 1;
            missing -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(total);
    for (stratum, k) in strata.iter().zip(take) {
        let mut s = stratum.to_vec();
        s.shuffle(&mut rng);
        chosen.extend_from_slice(&s[..k]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn mentioning(dialogues: &[Dialogue], domains: &[String]) -> Vec<Dialogue> {
    dialogues
        .iter()
        .filter(|d| domains.iter().any(|x| d.mentions_domain(x)))
        .cloned()
        .collect()
}

/// Scratch: train only on the target sample. Finetune: train on source
/// domains with target slots masked, then on the target sample. Both are
/// scored on the target domain's test dialogues.
pub fn domain_expansion_run(
    corpus: &Corpus,
    ontology: &Ontology,
    target: &str,
    fraction: f64,
    mode: ExpansionMode,
    config: &TrainConfig,
) -> Result<ExpansionReport> {
    if !ontology.has_domain(target) {
        return Err(Error::UnknownDomain(target.to_string()));
    }
    let sample_idx = sample_dialogues(&corpus.train, target, fraction, config.seed)?;
    let sample: Vec<Dialogue> = sample_idx.iter().map(|&i| corpus.train[i].clone()).collect();
    let target_only = vec![target.to_string()];
    let sources: Vec<String> = ontology.domains().filter(|d| *d != target).map(String::from).collect();

    let mut model = init_model(config, corpus, ontology)?;
    if mode == ExpansionMode::Finetune {
        if sources.is_empty() {
            return Err(Error::Config("finetune needs at least one source domain".into()));
        }
        model.set_active_domains(Some(&sources))?;
        let src_train = mentioning(&corpus.train, &sources);
        let src_dev = mentioning(&corpus.dev, &sources);
        model = train_model(model, config, &src_train, &src_dev, None)?.model;
    }
    model.set_active_domains(Some(&target_only))?;
    let target_dev = mentioning(&corpus.dev, &target_only);
    let model = train_model(model, config, &sample, &target_dev, None)?.model;
    let mut report = per_domain_eval(&corpus.test, &model, target)?;
    report.metadata.insert("mode".into(), serde_json::to_value(mode).expect("mode"));
    report.metadata.insert("fraction".into(), fraction.into());
    report.metadata.insert("target".into(), target.into());
    Ok(ExpansionReport {
        target: target.to_string(),
        mode,
        fraction,
        seed: config.seed,
        sampled_ids: sample.iter().map(|d| d.id.clone()).collect(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;
    use proptest::prelude::*;

    fn state(pairs: &[(&str, &str, &str)]) -> DialogueState {
        let mut s = DialogueState::new();
        for (d, k, v) in pairs {
            s.set(SlotKey::new(*d, *k), v);
        }
        s
    }

    fn ontology() -> Ontology {
        Ontology::from_json_str(
            r#"{"domains": {"hotel": {"area": {"mode": "value", "values": ["north", "south"]},
                                        "stars": {"mode": "value", "values": ["4", "5"]}},
                            "taxi": {"leave at": {"mode": "span"}}}}"#,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let a = state(&[("hotel", "area", "north")]);
        let b = state(&[("hotel", "area", "South")]);
        assert_eq!(joint_accuracy(&[a.clone(), a.clone()], &[a.clone(), a.clone()]).unwrap(), 1.0);
        assert_eq!(joint_accuracy(&[a.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap(), 0.5);
        assert!(matches!(joint_accuracy(std::slice::from_ref(&a), &[]), Err(Error::Alignment(_))));
        let o = ontology();
        let s = slot_accuracy(std::slice::from_ref(&a), std::slice::from_ref(&b), &o).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
        let case = state(&[("hotel", "area", "  NORTH ")]);
        assert_eq!(joint_accuracy(&[case], &[a]).unwrap(), 1.0);
    }

    #[test]
    fn thirty_pairs_ten_turns() {
        let o = Ontology::multiwoz();
        assert_eq!(o.pair_count(), 30);
        let gold = vec![DialogueState::new(); 10];
        let mut pred = gold.clone();
        pred[3] = state(&[("hotel", "area", "north")]);
        let s = slot_accuracy(&pred, &gold, &o).unwrap();
        assert!((s - 299.0 / 300.0).abs() < 1e-12);
    }

    fn dialogue(id: &str, states: Vec<DialogueState>) -> Dialogue {
        Dialogue {
            id: id.into(),
            turns: states
                .into_iter()
                .map(|state| Turn {
                    agent: String::new(),
                    user: "x".into(),
                    state,
                })
                .collect(),
        }
    }

    #[test]
    fn per_domain_filtering() {
        let o = ontology();
        let d1 = dialogue("a", vec![state(&[("hotel", "area", "north")]), state(&[("hotel", "area", "north"), ("taxi", "leave at", "08:00")])]);
        let d2 = dialogue("b", vec![state(&[("taxi", "leave at", "09:00")])]);
        let pred = vec![
            vec![state(&[("hotel", "area", "north")]), state(&[("hotel", "area", "north")])],
            vec![state(&[("taxi", "leave at", "09:00")])],
        ];
        let r = score(&pred, &[d1.clone(), d2.clone()], &o).unwrap();
        assert_eq!(r.turns, 3);
        assert!((r.joint - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_domain["hotel"], DomainReport { joint: 1.0, slot: 1.0, turns: 2, dialogues: 1 });
        let taxi = &r.per_domain["taxi"];
        assert_eq!((taxi.turns, taxi.dialogues), (3, 2));
        assert!((taxi.joint - 2.0 / 3.0).abs() < 1e-12);
        let empty = score_domain(&pred[..1], &[d1.clone()][..], &o.restrict_domains(&["hotel"]).unwrap(), "hotel").unwrap();
        assert_eq!(empty.turns, 2);
        let none = score_domain(&pred[1..], &[d2][..], &o, "hotel").unwrap();
        assert_eq!((none.turns, none.joint), (0, 0.0));
        assert!(matches!(score_domain(&pred, &[d1.clone(), d1], &o, "zoo"), Err(Error::UnknownDomain(_))));
    }

    #[test]
    fn sampling_is_stratified_and_seeded() {
        let ds: Vec<Dialogue> = (0..40)
            .map(|i| dialogue(&format!("d{i}"), vec![state(&[("hotel", "area", "north")]); 1 + i % 8]))
            .collect();
        let a = sample_dialogues(&ds, "hotel", 0.1, 3).unwrap();
        let b = sample_dialogues(&ds, "hotel", 0.1, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let mut lens: Vec<usize> = a.iter().map(|&i| ds[i].turns.len()).collect();
        lens.sort();
        assert!(lens[0] <= 2 && lens[3] >= 7, "{lens:?}");
        assert_eq!(sample_dialogues(&ds, "hotel", 1.0, 3).unwrap(), (0..40).collect::<Vec<_>>());
        assert!(matches!(sample_dialogues(&ds, "hotel", 0.01, 3), Err(Error::EmptySample(_))));
        assert!(matches!(sample_dialogues(&ds, "taxi", 0.5, 3), Err(Error::EmptySample(_))));
    }

    fn arb_state() -> impl Strategy<Value = DialogueState> {
        let cells = prop::collection::vec((0usize..3, 0usize..4), 0..4);
        cells.prop_map(|cells| {
            let keys = [("hotel", "area"), ("hotel", "stars"), ("taxi", "leave at")];
            let vals = ["north", "south", "08:00", "don't care"];
            let mut s = DialogueState::new();
            for (k, v) in cells {
                s.set(SlotKey::new(keys[k].0, keys[k].1), vals[v]);
            }
            s
        })
    }

    proptest! {
        #[test]
        fn metrics_match_set_oracles(pairs in prop::collection::vec((arb_state(), arb_state()), 1..40)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let o = ontology();
            let oracle_joint = p.iter().zip(&g).filter(|(a, b)| {
                let x: BTreeSet<_> = a.triples().into_iter().map(|t| (t.domain, t.slot, t.value)).collect();
                let y: BTreeSet<_> = b.triples().into_iter().map(|t| (t.domain, t.slot, t.value)).collect();
                x == y
            }).count() as f64 / g.len() as f64;
            prop_assert!((joint_accuracy(&p, &g).unwrap() - oracle_joint).abs() < 1e-12);
            let mut hits = 0;
            for (a, b) in p.iter().zip(&g) {
                for k in o.pairs() {
                    if a.get(&k).unwrap_or(NOT_MENTIONED) == b.get(&k).unwrap_or(NOT_MENTIONED) {
                        hits += 1;
                    }
                }
            }
            let oracle_slot = hits as f64 / (3 * g.len()) as f64;
            let slot = slot_accuracy(&p, &g, &o).unwrap();
            prop_assert!((slot - oracle_slot).abs() < 1e-12);
            prop_assert_eq!(joint_accuracy(&g, &g).unwrap(), 1.0);
            prop_assert_eq!(slot_accuracy(&g, &g, &o).unwrap(), 1.0);
            if joint_accuracy(&p, &g).unwrap() == 1.0 {
                prop_assert_eq!(slot, 1.0);
            }
        }
    }
}
