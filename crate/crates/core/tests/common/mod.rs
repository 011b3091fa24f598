#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use faithscore::backends::{Backend, BackendConfig, Script};
use faithscore::decomposer::DecomposerTemplate;
use faithscore::harness::{load_samples, DatasetFormat, Pipeline, CAPTION_PROMPT};
use faithscore::recognizer::{split_into_subsentences, RecognizerTemplate};
use faithscore::types::sha256_hex;
use faithscore::{FactCategory, Sample, SubSentence, TaskCategory};

/// Hand-written description of one sample and what the scripted models say about it.
#[derive(Clone)]
pub struct Spec {
    pub id: String,
    pub model: String,
    pub task: TaskCategory,
    pub answer: String,
    /// One `D` or `A` per sub-sentence.
    pub labels: String,
    pub facts: Vec<(FactCategory, String, bool)>,
}

impl Spec {
    pub fn new(id: &str, model: &str, task: TaskCategory, answer: &str, labels: &str) -> Spec {
        Spec {
            id: id.into(),
            model: model.into(),
            task,
            answer: answer.into(),
            labels: labels.into(),
            facts: Vec::new(),
        }
    }

    pub fn fact(mut self, category: FactCategory, statement: &str, supported: bool) -> Spec {
        self.facts.push((category, statement.into(), supported));
        self
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub dataset: PathBuf,
    pub samples: Vec<Sample>,
    pub llm_script: Script,
    pub vem_script: Script,
}

pub fn sections(facts: &[(FactCategory, String, bool)]) -> String {
    let mut out = String::new();
    for cat in FactCategory::ALL {
        out.push_str(cat.header());
        out.push_str(":\n");
        for (c, s, _) in facts {
            if *c == cat {
                out.push_str("- ");
                out.push_str(s);
                out.push('\n');
            }
        }
    }
    out
}

pub fn labels_reply(labels: &str) -> String {
    labels
        .chars()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}\n", i + 1))
        .collect()
}

/// Writes images and a dataset for `specs` and scripts both backends.
pub fn build(specs: &[Spec]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let rec = RecognizerTemplate::builtin();
    let dec = DecomposerTemplate::builtin();
    let mut llm = Script::new();
    let mut vem = Script::new();
    let mut verdicts: HashMap<String, bool> = HashMap::new();
    let mut lines = Vec::new();

    for (i, spec) in specs.iter().enumerate() {
        let image = format!("img{i}.png");
        std::fs::write(dir.path().join(&image), format!("image bytes {i}")).unwrap();
        let question = if spec.task == TaskCategory::Caption {
            CAPTION_PROMPT.to_string()
        } else {
            format!("What can you tell about picture {i}?")
        };
        lines.push(
            serde_json::json!({
                "id": spec.id,
                "image": image,
                "question": question,
                "answer": spec.answer,
                "model_name": spec.model,
                "task_category": spec.task.display_name(),
            })
            .to_string(),
        );

        let subs = split_into_subsentences(&spec.answer, rec.split_options());
        assert_eq!(subs.len(), spec.labels.len(), "label count for {}: {subs:?}", spec.id);
        llm = llm.with(sha256_hex(rec.render(&spec.answer, &subs).as_bytes()), labels_reply(&spec.labels));

        let descriptive: Vec<&SubSentence> = subs
            .iter()
            .zip(spec.labels.chars())
            .filter(|(_, l)| *l == 'D')
            .map(|(s, _)| s)
            .collect();
        if !descriptive.is_empty() {
            let text = descriptive.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            llm = llm.with(sha256_hex(dec.render(&text).as_bytes()), sections(&spec.facts));
        }
        for (_, statement, supported) in &spec.facts {
            if let Some(prev) = verdicts.insert(statement.clone(), *supported) {
                assert_eq!(prev, *supported, "conflicting verdicts for {statement:?}");
            }
            vem = vem.with(statement.clone(), if *supported { "Yes." } else { "No." });
        }
    }

    let dataset = dir.path().join("data.jsonl");
    std::fs::write(&dataset, lines.join("\n") + "\n").unwrap();
    let samples = load_samples(&dataset, DatasetFormat::Jsonl).unwrap();
    Fixture {
        dir,
        dataset,
        samples,
        llm_script: llm,
        vem_script: vem,
    }
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Fresh pipeline with zeroed call counters.
    pub fn pipeline(&self) -> Pipeline {
        let llm = Backend::new(BackendConfig::scripted("scripted-llm", self.llm_script.clone())).unwrap();
        let vem = Backend::new(BackendConfig::scripted("scripted-vem", self.vem_script.clone()))
            .unwrap()
            .with_image_root(self.dir.path());
        Pipeline::new(llm, vem, RecognizerTemplate::builtin(), DecomposerTemplate::builtin())
    }
}

/// The hand-traced sample: five descriptive sub-sentences and one analytical,
/// eleven facts, three unsupported facts spread over two sub-sentences.
pub fn hand_traced() -> Spec {
    use FactCategory::*;
    Spec::new(
        "hand",
        "model-a",
        TaskCategory::DetailedDescription,
        "A red car is parked on the street. A tall man wears a blue jacket. Two dogs sit on the grass. \
         A wooden bench stands near a tree. The sky above is cloudy. This suggests it may rain later.",
        "DDDDDA",
    )
    .fact(Entity, "There is a car.", true)
    .fact(Entity, "There is a man.", true)
    .fact(Entity, "There are dogs.", true)
    .fact(Entity, "There is a bench.", true)
    .fact(Entity, "There is a tree.", true)
    .fact(Count, "There are two dogs.", false)
    .fact(Color, "The car is red.", true)
    .fact(Color, "The jacket is blue.", false)
    .fact(Relation, "The dogs sit on the grass.", true)
    .fact(Other, "The man is tall.", false)
    .fact(Other, "The sky is cloudy.", true)
}

/// A relation the image contradicts while everything else holds.
pub fn relation_sample() -> Spec {
    use FactCategory::*;
    Spec::new(
        "relation",
        "model-b",
        TaskCategory::ComplexQuestion,
        "A cat sleeps on a sofa. Cats usually nap after eating.",
        "DA",
    )
    .fact(Entity, "There is a cat.", true)
    .fact(Entity, "There is a sofa.", true)
    .fact(Relation, "The cat sleeps on the sofa.", false)
}

/// Ten samples across two models and all four tasks.
pub fn ten_samples() -> Vec<Spec> {
    use FactCategory::*;
    use TaskCategory::*;
    vec![
        hand_traced(),
        relation_sample(),
        Spec::new("c1", "model-a", Caption, "A dog runs across a park.", "D")
            .fact(Entity, "There is a dog.", true)
            .fact(Entity, "There is a park.", true)
            .fact(Relation, "The dog runs across the park.", true),
        Spec::new("c2", "model-b", Caption, "Three birds perch on a wire.", "D")
            .fact(Entity, "There are birds.", true)
            .fact(Count, "There are three birds.", false)
            .fact(Relation, "The birds perch on a wire.", true),
        Spec::new("v1", "model-a", Conversation, "I think the photo feels nostalgic.", "A"),
        Spec::new("v2", "model-b", Conversation, "The kitchen has white cabinets; a kettle sits on the stove.", "DD")
            .fact(Entity, "There is a kitchen.", true)
            .fact(Color, "The cabinets are white.", true)
            .fact(Entity, "There is a kettle.", false)
            .fact(Relation, "The kettle sits on the stove.", false),
        Spec::new("v3", "model-a", Conversation, "Yes, there is a green bicycle. It might belong to a student.", "DA")
            .fact(Entity, "There is a bicycle.", true)
            .fact(Color, "The bicycle is green.", true),
        Spec::new("d1", "model-b", DetailedDescription, "A beach with golden sand stretches far. Waves roll in gently.", "DD")
            .fact(Entity, "There is a beach.", true)
            .fact(Color, "The sand is golden.", true)
            .fact(Entity, "There are waves.", true)
            .fact(Other, "The waves roll in gently.", false),
        Spec::new("q1", "model-a", ComplexQuestion, "The girl holds an umbrella, so it is probably raining.", "D")
            .fact(Entity, "There is a girl.", true)
            .fact(Entity, "There is an umbrella.", true)
            .fact(Relation, "The girl holds an umbrella.", true),
        Spec::new("q2", "model-b", ComplexQuestion, "Two men play chess at a table. One seems to be winning.", "DA")
            .fact(Entity, "There are men.", true)
            .fact(Count, "There are two men.", true)
            .fact(Relation, "The men play chess at a table.", true),
    ]
}
