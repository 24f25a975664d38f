use std::fs;
use std::path::Path;

use crate::data::{
    load_alignment, load_c1, load_c2, load_completion, load_corpus, load_mlkg, load_split, save_alignment, save_c1, save_c2,
    save_completion, save_corpus, save_mlkg, save_split, Mlkg, SynthData, TaggedSentence, TripleSentence,
};
use crate::error::{Error, Result};
use crate::eval::TaskData;
use crate::objectives::KnowledgeSource;

const ENTITIES: &str = "entities.tsv";
const RELATIONS: &str = "relations.tsv";
const TRIPLES: &str = "triples.tsv";
const DESCRIPTIONS: &str = "descriptions.tsv";
const TRIPLE_SENTENCES: &str = "triple_sentences";
const SPLIT: &str = "split.tsv";
const CORPUS: &str = "corpus.tsv";
const COMPLETION_TRAIN: &str = "completion_train.tsv";
const COMPLETION_TEST: &str = "completion_test.tsv";
const ALIGNMENT_TRAIN: &str = "alignment_train.tsv";
const ALIGNMENT_TEST: &str = "alignment_test.tsv";

/// Everything the stages read: knowledge graph, the two sentence corpora,
/// pretraining text and the downstream splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskData,
    pub c1: Vec<TaggedSentence>,
    pub c2: Vec<TripleSentence>,
    pub corpus: Vec<(String, String)>,
}

impl Dataset {
    pub fn from_synth(d: SynthData) -> Self {
        Dataset { task: TaskData::from_synth(&d), c1: d.c1, c2: d.c2, corpus: d.corpus }
    }

    /// Knowledge available to adapter training.
    pub fn knowledge(&self) -> Result<KnowledgeSource> {
        KnowledgeSource::for_split(&self.task.kg, &self.c1, &self.c2, &self.task.split)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let t = &self.task;
        save_knowledge(dir, &t.kg, &self.c1, &self.c2)?;
        save_split(&dir.join(SPLIT), &t.split)?;
        save_corpus(&dir.join(CORPUS), &self.corpus)?;
        save_completion(&dir.join(COMPLETION_TRAIN), &t.completion_train)?;
        save_completion(&dir.join(COMPLETION_TEST), &t.completion_test)?;
        save_alignment(&dir.join(ALIGNMENT_TRAIN), &t.alignment_train)?;
        save_alignment(&dir.join(ALIGNMENT_TEST), &t.alignment_test)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(ENTITIES).is_file() {
            return Err(Error::MissingStage { required: "gen-synthetic".into(), path: dir.display().to_string() });
        }
        let kg = load_mlkg(&dir.join(ENTITIES), &dir.join(RELATIONS), &dir.join(TRIPLES))?;
        let split = load_split(&dir.join(SPLIT))?;
        let c1 = load_c1(&dir.join(DESCRIPTIONS))?;
        let mut c2 = Vec::new();
        for lang in split.all() {
            let path = dir.join(TRIPLE_SENTENCES).join(format!("{lang}.tsv"));
            if path.is_file() {
                c2.extend(load_c2(&path, &lang)?);
            }
        }
        let task = TaskData {
            kg,
            split,
            completion_train: load_completion(&dir.join(COMPLETION_TRAIN))?,
            completion_test: load_completion(&dir.join(COMPLETION_TEST))?,
            alignment_train: load_alignment(&dir.join(ALIGNMENT_TRAIN))?,
            alignment_test: load_alignment(&dir.join(ALIGNMENT_TEST))?,
        };
        Ok(Dataset { task, c1, c2, corpus: load_corpus(&dir.join(CORPUS))? })
    }
}

/// Writes a knowledge graph with its sentence corpora, one triple-sentence
/// file per language.
pub fn save_knowledge(dir: &Path, kg: &Mlkg, c1: &[TaggedSentence], c2: &[TripleSentence]) -> Result<()> {
    fs::create_dir_all(dir.join(TRIPLE_SENTENCES))?;
    save_mlkg(kg, &dir.join(ENTITIES), &dir.join(RELATIONS), &dir.join(TRIPLES))?;
    save_c1(&dir.join(DESCRIPTIONS), c1)?;
    let mut langs: Vec<&str> = c2.iter().map(|r| r.lang.as_str()).collect();
    langs.sort_unstable();
    langs.dedup();
    for lang in langs {
        let records: Vec<TripleSentence> = c2.iter().filter(|r| r.lang == lang).cloned().collect();
        save_c2(&dir.join(TRIPLE_SENTENCES).join(format!("{lang}.tsv")), &records)?;
    }
    Ok(())
}
