//! Seeded synthetic transcript corpus with known ground truth.
//!
//! Every student prompt comes from a per-fine-type phrase bank, a chosen set
//! of sessions carries an injected risk pattern, and canary strings (roster
//! names, emails, institution ids) are planted in prompts so leaks can be
//! scanned for after the pipeline runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::default_taxonomy;
use crate::ingest::RawEvent;
use crate::model::{Author, PromptAttribute, TaxonomyConfig};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub course_id: String,
    pub student_count: usize,
    pub session_count: usize,
    pub min_prompts: usize,
    pub max_prompts: usize,
    /// Relative weight per fine type for ordinary prompts.
    pub strategy_mixture: BTreeMap<String, f64>,
    pub inject_copy_paste: usize,
    pub inject_answer_streak: usize,
    pub inject_unverified_code: usize,
    pub canary_count: usize,
    /// Chance that an assistant reply in an ordinary session contains code.
    pub code_reply_rate: f64,
    #[serde(with = "crate::timefmt")]
    pub start: DateTime<Utc>,
    pub weeks: u32,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        let mixture = [
            ("task_clarification", 0.10),
            ("concept_explanation", 0.12),
            ("approach_request", 0.12),
            ("full_solution_request", 0.06),
            ("debugging_help", 0.14),
            ("code_behavior_question", 0.10),
            ("progress_check", 0.10),
            ("refactor_request", 0.06),
            ("efficiency_request", 0.06),
            ("alternative_solution", 0.07),
            ("style_feedback", 0.07),
        ];
        Self {
            seed: 7,
            course_id: "cs101".into(),
            student_count: 22,
            session_count: 230,
            min_prompts: 2,
            max_prompts: 5,
            strategy_mixture: mixture.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            inject_copy_paste: 12,
            inject_answer_streak: 12,
            inject_unverified_code: 12,
            canary_count: 100,
            code_reply_rate: 0.3,
            start: Utc.with_ymd_and_hms(2024, 9, 2, 0, 0, 0).unwrap(),
            weeks: 12,
        }
    }
}

impl SyntheticScenario {
    pub fn parse(raw: &str) -> Result<Self, SynthError> {
        Ok(toml::from_str(raw)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    PhraseBank,
    Paste,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub session_id: String,
    /// Zero-based position among the session's student prompts.
    pub prompt_index: usize,
    pub fine_id: String,
    pub source: PromptSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanaryKind {
    Name,
    Email,
    InstitutionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canary {
    pub kind: CanaryKind,
    pub value: String,
    pub session_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedSessions {
    pub copy_paste: Vec<String>,
    pub answer_overreliance: Vec<String>,
    pub lack_of_verification: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub course_id: String,
    pub student_count: usize,
    pub session_count: usize,
    pub injected: InjectedSessions,
    pub control_sessions: Vec<String>,
    pub canaries: Vec<Canary>,
    /// Raw student identifiers; these must never appear downstream either.
    pub student_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub events: Vec<RawEvent>,
    pub ground_truth: Vec<GroundTruthRow>,
    pub manifest: Manifest,
    pub roster: Vec<String>,
}

pub const TOPICS: &[&str] = &[
    "recursion", "loops", "lists", "dictionaries", "strings", "sorting", "classes", "tuples",
    "parsing", "matrices",
];

pub const ROSTER_POOL: &[&str] = &[
    "Anneliese Brandt", "Tobiah Okonkwo", "Mireille Castellano", "Dagny Halvorsen",
    "Ignatius Pemberton", "Saoirse Delacroix", "Leopold Vasquez", "Ottoline Farquhar",
    "Casimir Nakagawa", "Philippa Odhiambo", "Rosalind Thackeray", "Evander Kowalczyk",
    "Isolde Marchetti", "Florian Abernathy", "Henrietta Szabo", "Barnaby Okafor",
    "Clementine Ashdown", "Ludovica Ferreira", "Peregrine Lindqvist", "Seraphina Oyelaran",
    "Thaddeus Bellweather", "Wilhelmina Achterberg",
];

/// Prompt templates per fine type; `{topic}` is filled in.
pub fn phrase_bank(fine_id: &str) -> &'static [&'static str] {
    match fine_id {
        "task_clarification" => &[
            "Can you clarify what the {topic} exercise wants?",
            "What is expected for the {topic} part of the lab?",
            "I don't understand the problem statement for {topic}.",
            "The instructions for the {topic} lab confuse me.",
        ],
        "concept_explanation" => &[
            "Can you explain how {topic} works in Python?",
            "What is the difference between {topic} and plain variables?",
            "I am confused by the concept of {topic}.",
            "What is the meaning of {topic} in this course?",
        ],
        "approach_request" => &[
            "How should I approach the {topic} exercise?",
            "Where should I start with the {topic} lab?",
            "What would be a good first step for {topic}?",
            "Can you help me break this down for {topic}?",
        ],
        "full_solution_request" => &[
            "Just give me the {topic} code please.",
            "Write the whole {topic} solution for me.",
            "Please solve this {topic} exercise for me.",
            "Can you give me the full code for {topic}?",
            "Do it for me, I need the {topic} part done.",
        ],
        "debugging_help" => &[
            "I get an error in my {topic} code.",
            "My {topic} function crashes and I cannot find the bug.",
            "How do I fix this {topic} traceback?",
            "My {topic} part is not working at all.",
        ],
        "code_behavior_question" => &[
            "Why does my {topic} code print twice?",
            "What happens when {topic} gets an empty input?",
            "What does this code do with {topic}?",
            "I am surprised by how {topic} behaves here.",
        ],
        "progress_check" => &[
            "Is this correct for the {topic} exercise?",
            "Can you check my {topic} attempt?",
            "Am I on the right track with {topic}?",
            "Does this look good for {topic} now?",
            "Could you verify my {topic} answer?",
        ],
        "refactor_request" => &[
            "How can I refactor my {topic} code?",
            "Can you help me clean up this {topic} part?",
            "I want my {topic} code to be more readable.",
            "How do I simplify the {topic} section?",
        ],
        "efficiency_request" => &[
            "How can I make my {topic} code faster?",
            "My {topic} version is too slow on big inputs.",
            "Is there a more efficient way to do {topic}?",
            "What is the time complexity of my {topic} code?",
        ],
        "alternative_solution" => &[
            "Is there another way to do {topic}?",
            "Can you show a different way to handle {topic}?",
            "Could I use an alternative for {topic}?",
            "What other ways exist to solve {topic}?",
        ],
        "style_feedback" => &[
            "Is my {topic} code good style?",
            "Are my variable names okay in the {topic} part?",
            "Is this idiomatic Python for {topic}?",
            "What is the best practice for {topic}?",
        ],
        _ => &[],
    }
}

const PROSE_REPLIES: &[&str] = &[
    "Good question. Start from a small {topic} example and trace each step by hand.",
    "Think about which part of the {topic} logic changes between iterations.",
    "Try writing down the expected result for two tiny {topic} cases first.",
    "Consider what should happen at the boundary of your {topic} logic.",
];

const CODE_REPLY: &str = "Here is one possible sketch for {topic}:\n\n```python\ndef process_{topic}(items):\n    result = []\n    for index, item in enumerate(items):\n        if item is None:\n            continue\n        value = transform(item, index)\n        result.append(value)\n    total = sum(len(str(v)) for v in result)\n    return result, total\n```\n\nAdapt the names to your own {topic} data.";

const PASTE_PREFIX: &str = "Is this correct now?\n";
const PASTE_FINE_ID: &str = "progress_check";
const STREAK_FINE_ID: &str = "full_solution_request";
const FILLER_FINE_ID: &str = "approach_request";

fn fill(template: &str, topic: &str) -> String {
    template.replace("{topic}", topic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plan {
    Control,
    CopyPaste,
    AnswerStreak,
    UnverifiedCode,
}

struct Prompt {
    fine_id: String,
    text: String,
    source: PromptSource,
}

struct Turn {
    prompt: Prompt,
    reply: String,
}

fn check(scenario: &SyntheticScenario, taxonomy: &TaxonomyConfig) -> Result<Vec<(String, f64)>, SynthError> {
    let bad = |m: String| Err(SynthError::Infeasible(m));
    if scenario.student_count == 0 {
        return bad("at least one student is required".into());
    }
    if scenario.session_count < scenario.student_count {
        return bad(format!(
            "{} sessions cannot cover {} students",
            scenario.session_count, scenario.student_count
        ));
    }
    let injected = scenario.inject_copy_paste + scenario.inject_answer_streak + scenario.inject_unverified_code;
    if injected > scenario.session_count {
        return bad(format!(
            "{injected} injected patterns do not fit into {} sessions",
            scenario.session_count
        ));
    }
    if scenario.min_prompts == 0 || scenario.min_prompts > scenario.max_prompts {
        return bad("prompt range must satisfy 1 <= min_prompts <= max_prompts".into());
    }
    if scenario.weeks == 0 {
        return bad("weeks must be positive".into());
    }
    if !(0.0..=1.0).contains(&scenario.code_reply_rate) {
        return bad("code_reply_rate must be within [0, 1]".into());
    }
    let mut mixture = Vec::new();
    for (fine_id, &w) in &scenario.strategy_mixture {
        if phrase_bank(fine_id).is_empty() || taxonomy.fine_type(fine_id).is_none() {
            return bad(format!("mixture names fine type {fine_id:?} without a phrase bank"));
        }
        if !(w.is_finite() && w >= 0.0) {
            return bad(format!("mixture weight for {fine_id} must be a non-negative number"));
        }
        if w > 0.0 {
            mixture.push((fine_id.clone(), w));
        }
    }
    if mixture.is_empty() {
        return bad("strategy mixture has no positive weight".into());
    }
    Ok(mixture)
}

/// Generates the corpus described by `scenario`. Same scenario, same bytes.
pub fn generate(scenario: &SyntheticScenario) -> Result<SyntheticCorpus, SynthError> {
    let taxonomy = default_taxonomy();
    let mixture = check(scenario, &taxonomy)?;
    let weights = WeightedIndex::new(mixture.iter().map(|(_, w)| *w))
        .map_err(|e| SynthError::Infeasible(e.to_string()))?;
    let answer_seeking = |fine_id: &str| {
        taxonomy
            .fine_type(fine_id)
            .is_some_and(|f| f.has(PromptAttribute::AnswerSeeking))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let student_ids: Vec<String> = (0..scenario.student_count)
        .map(|i| format!("1TE{:05}", 23001 + i))
        .collect();
    let roster: Vec<String> = ROSTER_POOL
        .iter()
        .take(scenario.student_count)
        .map(|s| s.to_string())
        .collect();

    let mut owners: Vec<usize> = (0..scenario.student_count).collect();
    while owners.len() < scenario.session_count {
        owners.push(rng.gen_range(0..scenario.student_count));
    }
    owners.shuffle(&mut rng);

    let mut plans = vec![Plan::Control; scenario.session_count];
    let mut order: Vec<usize> = (0..scenario.session_count).collect();
    order.shuffle(&mut rng);
    let mut it = order.into_iter();
    for (plan, count) in [
        (Plan::CopyPaste, scenario.inject_copy_paste),
        (Plan::AnswerStreak, scenario.inject_answer_streak),
        (Plan::UnverifiedCode, scenario.inject_unverified_code),
    ] {
        for idx in it.by_ref().take(count) {
            plans[idx] = plan;
        }
    }

    let sample_prompt = |rng: &mut ChaCha8Rng, fine_id: &str, topic: &str| Prompt {
        fine_id: fine_id.to_string(),
        text: fill(phrase_bank(fine_id).choose(rng).expect("bank is non-empty"), topic),
        source: PromptSource::PhraseBank,
    };
    let prose = |rng: &mut ChaCha8Rng, topic: &str| fill(PROSE_REPLIES.choose(rng).expect("non-empty"), topic);

    let mut sessions: Vec<(String, usize, String, Vec<Turn>)> = Vec::new();
    let mut manifest_injected = InjectedSessions::default();
    let mut controls = Vec::new();
    for (idx, plan) in plans.iter().enumerate() {
        let session_id = format!("S{:04}", idx + 1);
        let topic = TOPICS.choose(&mut rng).expect("non-empty").to_string();
        let n = rng.gen_range(scenario.min_prompts..=scenario.max_prompts);
        let mut turns = Vec::new();
        match plan {
            Plan::Control => {
                controls.push(session_id.clone());
                let code: Vec<bool> = (0..n)
                    .map(|i| i + 1 < n && rng.gen_bool(scenario.code_reply_rate))
                    .collect();
                let mut fine: Vec<String> = (0..n)
                    .map(|i| {
                        if i > 0 && code[i - 1] {
                            PASTE_FINE_ID.to_string()
                        } else {
                            mixture[weights.sample(&mut rng)].0.clone()
                        }
                    })
                    .collect();
                // Keep ordinary sessions below the answer-seeking threshold.
                let mut seeking = fine.iter().filter(|f| answer_seeking(f)).count();
                for f in fine.iter_mut() {
                    if seeking * 2 < n {
                        break;
                    }
                    if answer_seeking(f) {
                        *f = FILLER_FINE_ID.to_string();
                        seeking -= 1;
                    }
                }
                for (i, f) in fine.iter().enumerate() {
                    let prompt = sample_prompt(&mut rng, f, &topic);
                    let reply = if code[i] { fill(CODE_REPLY, &topic) } else { prose(&mut rng, &topic) };
                    turns.push(Turn { prompt, reply });
                }
            }
            Plan::CopyPaste => {
                manifest_injected.copy_paste.push(session_id.clone());
                let n = n.max(2);
                let first = mixture[weights.sample(&mut rng)].0.clone();
                let code_reply = fill(CODE_REPLY, &topic);
                turns.push(Turn {
                    prompt: sample_prompt(&mut rng, &first, &topic),
                    reply: code_reply.clone(),
                });
                turns.push(Turn {
                    prompt: Prompt {
                        fine_id: PASTE_FINE_ID.into(),
                        text: format!("{PASTE_PREFIX}{code_reply}"),
                        source: PromptSource::Paste,
                    },
                    reply: prose(&mut rng, &topic),
                });
                for _ in 2..n {
                    let f = mixture[weights.sample(&mut rng)].0.clone();
                    let prompt = sample_prompt(&mut rng, &f, &topic);
                    turns.push(Turn { prompt, reply: prose(&mut rng, &topic) });
                }
            }
            Plan::AnswerStreak => {
                manifest_injected.answer_overreliance.push(session_id.clone());
                let n = rng.gen_range(4..=6);
                for _ in 0..n {
                    let prompt = sample_prompt(&mut rng, STREAK_FINE_ID, &topic);
                    turns.push(Turn { prompt, reply: prose(&mut rng, &topic) });
                }
            }
            Plan::UnverifiedCode => {
                manifest_injected.lack_of_verification.push(session_id.clone());
                for i in 0..n {
                    let f = mixture[weights.sample(&mut rng)].0.clone();
                    let prompt = sample_prompt(&mut rng, &f, &topic);
                    let reply = if i + 1 == n { fill(CODE_REPLY, &topic) } else { prose(&mut rng, &topic) };
                    turns.push(Turn { prompt, reply });
                }
            }
        }
        sessions.push((session_id, owners[idx], topic, turns));
    }

    // Plant canaries, at most one per phrase-bank prompt.
    let mut slots: Vec<(usize, usize)> = sessions
        .iter()
        .enumerate()
        .flat_map(|(s, (_, _, _, turns))| {
            turns
                .iter()
                .enumerate()
                .filter(|(_, t)| t.prompt.source == PromptSource::PhraseBank)
                .map(move |(t, _)| (s, t))
        })
        .collect();
    if slots.len() < scenario.canary_count {
        return Err(SynthError::Infeasible(format!(
            "{} canaries need as many prompts, only {} available",
            scenario.canary_count,
            slots.len()
        )));
    }
    slots.shuffle(&mut rng);
    let names = roster.len().min(scenario.canary_count / 3);
    let emails = (scenario.canary_count - names).div_ceil(2);
    let mut canaries = Vec::new();
    for (k, &(s, t)) in slots.iter().take(scenario.canary_count).enumerate() {
        let (kind, value, sentence) = if k < names {
            let v = roster[k].clone();
            (CanaryKind::Name, v.clone(), format!(" - {v} here"))
        } else if k < names + emails {
            let v = format!("qz{:04}.learner@campus.example.edu", 1000 + k);
            (CanaryKind::Email, v.clone(), format!(" Reach me at {v}"))
        } else {
            let v = format!("{}CS{:05}", 2 + k % 7, 40000 + k);
            (CanaryKind::InstitutionId, v.clone(), format!(" My id is {v}"))
        };
        sessions[s].3[t].prompt.text.push_str(&sentence);
        canaries.push(Canary {
            kind,
            value,
            session_id: sessions[s].0.clone(),
        });
    }
    canaries.sort_by(|a, b| (a.kind, &a.value).cmp(&(b.kind, &b.value)));

    let mut events = Vec::new();
    let mut ground_truth = Vec::new();
    for (idx, (session_id, owner, topic, turns)) in sessions.iter().enumerate() {
        let week = (idx as i64 * i64::from(scenario.weeks)) / scenario.session_count as i64;
        let day = week * 7 + rng.gen_range(0..5);
        let mut at = scenario.start
            + TimeDelta::days(day)
            + TimeDelta::hours(rng.gen_range(9..21))
            + TimeDelta::minutes(rng.gen_range(0..60));
        let mut push = |author: Author, text: &str, at: DateTime<Utc>| {
            events.push(RawEvent {
                student_id_raw: student_ids[*owner].clone(),
                author,
                timestamp: at,
                text_raw: text.to_string(),
                course_id: scenario.course_id.clone(),
                explicit_session_id: Some(session_id.clone()),
                topic_tag: Some(topic.clone()),
            });
        };
        for (i, turn) in turns.iter().enumerate() {
            push(Author::Student, &turn.prompt.text, at);
            at += TimeDelta::seconds(rng.gen_range(20..90));
            push(Author::Assistant, &turn.reply, at);
            at += TimeDelta::seconds(rng.gen_range(60..240));
            ground_truth.push(GroundTruthRow {
                session_id: session_id.clone(),
                prompt_index: i,
                fine_id: turn.prompt.fine_id.clone(),
                source: turn.prompt.source,
            });
        }
    }

    Ok(SyntheticCorpus {
        events,
        ground_truth,
        manifest: Manifest {
            seed: scenario.seed,
            course_id: scenario.course_id.clone(),
            student_count: scenario.student_count,
            session_count: scenario.session_count,
            injected: manifest_injected,
            control_sessions: controls,
            canaries,
            student_ids,
        },
        roster,
    })
}

/// Writes `transcript.jsonl`, `ground_truth.jsonl`, `manifest.json` and
/// `roster.txt` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus) -> Result<(), SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let jsonl = |rows: Vec<String>| rows.into_iter().map(|r| r + "\n").collect::<String>();
    let transcript = dir.join("transcript.jsonl");
    let lines = corpus
        .events
        .iter()
        .map(|e| serde_json::to_string(e).expect("events serialize"))
        .collect();
    fs::write(&transcript, jsonl(lines)).map_err(io(&transcript))?;
    let truth = dir.join("ground_truth.jsonl");
    let lines = corpus
        .ground_truth
        .iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize"))
        .collect();
    fs::write(&truth, jsonl(lines)).map_err(io(&truth))?;
    let manifest = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&corpus.manifest).expect("manifest serializes");
    fs::write(&manifest, body + "\n").map_err(io(&manifest))?;
    let roster = dir.join("roster.txt");
    fs::write(&roster, jsonl(corpus.roster.clone())).map_err(io(&roster))?;
    Ok(())
}

pub fn read_roster(path: &Path) -> Result<Vec<String>, SynthError> {
    let raw = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
