//! Synthetic production line with controllable vocabulary drift.
//!
//! Each process-element function gets one failure topic: a symptom attached
//! at the element plus several records whose cause chains run through that
//! element's behaviors and structures. Drift rewrites failure-label words with
//! synonyms while system labels never change, so a query phrased in canonical
//! words can still meet its records through the system context.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalSuite, SuiteQuery};
use crate::chunker::ChunkOptions;
use crate::diagnose::DiagnoseOptions;
use crate::ingest::{
    self, CausePair, FailureEntry, IngestError, ModelEntry, ModelSpec, RecordSpec,
};
use crate::ontology::{FailureCategory, KnowledgeGraph, Level};

const SYNONYMS_JSON: &str = include_str!("../../data/synonyms.json");

/// Canonical vocabulary grouped by role, each word with its synonyms.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SynonymTable {
    pub objects: BTreeMap<String, Vec<String>>,
    pub modes: BTreeMap<String, Vec<String>>,
    pub verbs: BTreeMap<String, Vec<String>>,
    pub components: BTreeMap<String, Vec<String>>,
    pub faults: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn bundled() -> Self {
        serde_json::from_str(SYNONYMS_JSON).expect("bundled synonym table parses")
    }

    fn lookup(&self, word: &str) -> Option<&[String]> {
        [
            &self.objects,
            &self.modes,
            &self.verbs,
            &self.components,
            &self.faults,
        ]
        .into_iter()
        .find_map(|m| m.get(word))
        .map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub processes: usize,
    pub elements_per_process: usize,
    pub records_per_topic: usize,
    /// Probability that any one failure-label word is swapped for a synonym.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            processes: 6,
            elements_per_process: 4,
            records_per_topic: 3,
            drift: 0.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("drift must lie in [0, 1], got {0}")]
    Drift(f64),
    #[error("at most {max} elements in total are supported, asked for {asked}")]
    TooManyElements { max: usize, asked: usize },
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        "invalid-params"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub model: ModelSpec,
    pub records: Vec<RecordSpec>,
    pub suite: EvalSuite,
}

impl SyntheticDataset {
    /// Builds the model and stores every record.
    pub fn build_graph(&self) -> Result<KnowledgeGraph, IngestError> {
        let mut g = ingest::build_fbs_model(&self.model)?;
        for r in &self.records {
            ingest::add_maintenance_record(&mut g, r)?;
        }
        Ok(g)
    }
}

const CAUSES_PER_TOPIC: usize = 5;

struct Topic {
    element_id: String,
    behavior_ids: [String; 2],
    /// Component -> (structure id, behavior index).
    structures: BTreeMap<String, (String, usize)>,
    symptom: Vec<String>,
    causes: Vec<(String, String)>,
}

fn drift_words(words: &[String], table: &SynonymTable, drift: f64, rng: &mut ChaCha8Rng) -> String {
    words
        .iter()
        .map(|w| match table.lookup(w) {
            Some(syns) if rng.random_bool(drift) => syns
                .choose(rng)
                .expect("synonym lists are nonempty")
                .clone(),
            _ => w.clone(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic for a given parameter set.
pub fn gen_synthetic_line(params: &SynthParams) -> Result<SyntheticDataset, SynthError> {
    gen_with_table(params, &SynonymTable::bundled())
}

fn gen_with_table(
    params: &SynthParams,
    table: &SynonymTable,
) -> Result<SyntheticDataset, SynthError> {
    for (name, v) in [
        ("processes", params.processes),
        ("elements_per_process", params.elements_per_process),
        ("records_per_topic", params.records_per_topic),
    ] {
        if v == 0 {
            return Err(SynthError::NotPositive(name));
        }
    }
    if !(0.0..=1.0).contains(&params.drift) {
        return Err(SynthError::Drift(params.drift));
    }
    let verbs: Vec<&String> = table.verbs.keys().collect();
    let objects: Vec<&String> = table.objects.keys().collect();
    let modes: Vec<&String> = table.modes.keys().collect();
    let components: Vec<&String> = table.components.keys().collect();
    let faults: Vec<&String> = table.faults.keys().collect();
    let topics_wanted = params.processes * params.elements_per_process;
    if topics_wanted > verbs.len() {
        return Err(SynthError::TooManyElements {
            max: verbs.len(),
            asked: topics_wanted,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut verb_order: Vec<&String> = verbs.clone();
    verb_order.shuffle(&mut rng);
    let mut combos: Vec<(&String, &String)> = components
        .iter()
        .flat_map(|c| faults.iter().map(move |f| (*c, *f)))
        .collect();
    combos.shuffle(&mut rng);

    let mut processes = Vec::new();
    let mut process_ids = Vec::new();
    let mut topics = Vec::new();
    let mut element_sequences = Vec::new();
    for p in 0..params.processes {
        let pid = format!("P{:02}", p + 1);
        let mut elements = Vec::new();
        let mut element_ids = Vec::new();
        for e in 0..params.elements_per_process {
            let t = topics.len();
            let verb = verb_order[t];
            let object = objects[(p + e * 5) % objects.len()];
            let mode = modes[(t * 3) % modes.len()];
            let eid = format!("{pid}E{:02}", e + 1);
            let pool: Vec<(String, String)> = (0..CAUSES_PER_TOPIC)
                .map(|i| {
                    let (c, f) = combos[(t * CAUSES_PER_TOPIC + i) % combos.len()];
                    (c.clone(), f.clone())
                })
                .collect();
            let behavior_ids = [format!("{eid}B1"), format!("{eid}B2")];
            let mut structures: BTreeMap<String, (String, usize)> = BTreeMap::new();
            let mut behavior_children: [Vec<ModelEntry>; 2] = [Vec::new(), Vec::new()];
            for (component, _) in &pool {
                if structures.contains_key(component) {
                    continue;
                }
                let b = structures.len() % 2;
                let sid = format!("{}S{}", behavior_ids[b], behavior_children[b].len() + 1);
                behavior_children[b].push(ModelEntry {
                    id: Some(sid.clone()),
                    label: format!("{verb} {component}"),
                    level: Level::Structure,
                    description: String::new(),
                    children: Vec::new(),
                });
                structures.insert(component.clone(), (sid, b));
            }
            let [b1, b2] = behavior_children;
            let behaviors = vec![
                ModelEntry {
                    id: Some(behavior_ids[0].clone()),
                    label: format!("{verb} motion"),
                    level: Level::Behavior,
                    description: String::new(),
                    children: b1,
                },
                ModelEntry {
                    id: Some(behavior_ids[1].clone()),
                    label: format!("{verb} positioning"),
                    level: Level::Behavior,
                    description: String::new(),
                    children: b2,
                },
            ];
            elements.push(ModelEntry {
                id: Some(eid.clone()),
                label: format!("{verb} the {object}"),
                level: Level::ProcessElementFunction,
                description: String::new(),
                children: behaviors,
            });
            element_ids.push(eid.clone());
            topics.push(Topic {
                element_id: eid,
                behavior_ids,
                structures,
                symptom: vec![object.clone(), mode.clone(), "at".into(), verb.clone()],
                causes: pool,
            });
        }
        processes.push(ModelEntry {
            id: Some(pid.clone()),
            label: format!("{} assembly station {}", objects[p % objects.len()], p + 1),
            level: Level::ProcessFunction,
            description: String::new(),
            children: elements,
        });
        process_ids.push(pid);
        element_sequences.push(element_ids);
    }
    let mut sequences = vec![process_ids];
    sequences.extend(element_sequences.into_iter().filter(|s| s.len() > 1));
    let model = ModelSpec {
        source: format!(
            "synthetic line: processes={} elements={} records={} drift={} seed={}",
            params.processes,
            params.elements_per_process,
            params.records_per_topic,
            params.drift,
            params.seed
        ),
        entries: vec![ModelEntry {
            id: Some("L".into()),
            label: "synthetic assembly line".into(),
            level: Level::LineFunction,
            description: String::new(),
            children: processes,
        }],
        sequences,
    };

    let mut records = Vec::new();
    let mut queries = Vec::new();
    for (t, topic) in topics.iter().enumerate() {
        // Canonical cause label -> surface forms used in this topic's records.
        let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for r in 0..params.records_per_topic {
            let record_id = format!("syn-{:02}-{}", t + 1, r + 1);
            let depth = rng.random_range(2..=4usize);
            let mut pool = topic.causes.clone();
            pool.shuffle(&mut rng);
            let chosen = &pool[..depth];

            let mut failures = vec![FailureEntry {
                key: "s".into(),
                label: drift_words(&topic.symptom, table, params.drift, &mut rng),
                category: FailureCategory::motion(),
                description: String::new(),
                attach: topic.element_id.clone(),
            }];
            let mut causes = Vec::new();
            for (i, (component, fault)) in chosen.iter().enumerate() {
                let canonical = format!("{component} {fault}");
                let surface = drift_words(
                    &[component.clone(), fault.clone()],
                    table,
                    params.drift,
                    &mut rng,
                );
                let (sid, b) = &topic.structures[component];
                let attach = if i == 0 {
                    topic.behavior_ids[*b].clone()
                } else {
                    sid.clone()
                };
                let category = if i == 0 {
                    FailureCategory::motion()
                } else {
                    FailureCategory::mechanism_structure()
                };
                let key = format!("c{}", i + 1);
                failures.push(FailureEntry {
                    key: key.clone(),
                    label: surface.clone(),
                    category,
                    description: String::new(),
                    attach,
                });
                let effect = if i == 0 {
                    "s".to_string()
                } else {
                    format!("c{}", rng.random_range(1..=i))
                };
                causes.push(CausePair::local(effect, key));

                let forms = seen.entry(canonical.clone()).or_insert_with(|| {
                    order.push(canonical.clone());
                    Vec::new()
                });
                if surface != canonical && !forms.contains(&surface) {
                    forms.push(surface);
                }
            }
            records.push(RecordSpec {
                record_id,
                author: "synthetic".into(),
                date: format!("2024-01-{:02}", (t * params.records_per_topic + r) % 28 + 1),
                failures,
                causes,
            });
        }
        let aliases = seen
            .into_iter()
            .filter(|(_, forms)| !forms.is_empty())
            .collect();
        queries.push(SuiteQuery {
            id: format!("q{:02}", t + 1),
            description: topic.symptom.join(" "),
            level: Some(Level::ProcessElementFunction),
            attach_hint: None,
            items: order,
            aliases,
        });
    }

    let suite = EvalSuite {
        name: format!("synthetic seed={} drift={}", params.seed, params.drift),
        options: DiagnoseOptions::default(),
        chunk_options: ChunkOptions::default(),
        queries,
    };
    Ok(SyntheticDataset {
        model,
        records,
        suite,
    })
}
