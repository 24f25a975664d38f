use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entity or relation with labels keyed by language code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeled {
    pub id: String,
    pub labels: BTreeMap<String, String>,
}

pub type Entity = Labeled;
pub type Relation = Labeled;

impl Labeled {
    pub fn new(id: impl Into<String>, labels: impl IntoIterator<Item = (String, String)>) -> Self {
        Labeled { id: id.into(), labels: labels.into_iter().collect() }
    }

    pub fn label(&self, lang: &str) -> Option<&str> {
        self.labels.get(lang).map(String::as_str)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['\t', '|', '=']) || self.id.chars().any(char::is_whitespace) {
            return Err(Error::Data(format!("invalid {what} id {:?}", self.id)));
        }
        if self.labels.is_empty() {
            return Err(Error::Data(format!("{what} {} has no labels", self.id)));
        }
        for (lang, label) in &self.labels {
            if lang.is_empty() || lang.contains(['\t', '|', '=']) {
                return Err(Error::Data(format!("{what} {}: invalid language code {lang:?}", self.id)));
            }
            if label.trim().is_empty() || label.contains(['\t', '|', '\n']) {
                return Err(Error::Data(format!("{what} {}: invalid {lang} label {label:?}", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, rel: impl Into<String>, tail: impl Into<String>) -> Self {
        Triple { head: head.into(), rel: rel.into(), tail: tail.into() }
    }
}

/// A multilingual knowledge graph with referential integrity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlkg {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<Triple>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

/// Summary counts in the usual dataset-table layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub entity_labels_per_lang: BTreeMap<String, usize>,
}

impl Mlkg {
    pub fn new(entities: Vec<Entity>, relations: Vec<Relation>, triples: Vec<Triple>) -> Result<Self> {
        let mut entity_index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            e.validate("entity")?;
            if entity_index.insert(e.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate entity id {}", e.id)));
            }
        }
        let mut relation_index = HashMap::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            r.validate("relation")?;
            if relation_index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate relation id {}", r.id)));
            }
        }
        let kg = Mlkg { entities, relations, triples, entity_index, relation_index };
        for (i, t) in kg.triples.iter().enumerate() {
            kg.check_triple(t).map_err(|e| Error::Data(format!("triple {}: {e}", i + 1)))?;
        }
        Ok(kg)
    }

    pub(crate) fn check_triple(&self, t: &Triple) -> Result<()> {
        for (what, id, ok) in [
            ("head", &t.head, self.entity_index.contains_key(&t.head)),
            ("relation", &t.rel, self.relation_index.contains_key(&t.rel)),
            ("tail", &t.tail, self.entity_index.contains_key(&t.tail)),
        ] {
            if !ok {
                return Err(Error::Data(format!("unknown {what} id {id}")));
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entity_index.get(id).map(|&i| &self.entities[i])
    }

    pub fn relation(&self, id: &str) -> Option<&Relation> {
        self.relation_index.get(id).map(|&i| &self.relations[i])
    }

    pub fn entity_ids(&self) -> BTreeSet<String> {
        self.entities.iter().map(|e| e.id.clone()).collect()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.entities.iter().chain(&self.relations).flat_map(|e| e.labels.keys().cloned()).collect()
    }

    pub fn stats(&self) -> KgStats {
        let mut per_lang = BTreeMap::new();
        for e in &self.entities {
            for l in e.labels.keys() {
                *per_lang.entry(l.clone()).or_insert(0) += 1;
            }
        }
        KgStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triples: self.triples.len(),
            entity_labels_per_lang: per_lang,
        }
    }

    /// Keeps only labels in `langs`; items left without labels are dropped,
    /// along with triples that lose an endpoint or relation.
    pub fn restrict_languages(&self, langs: &[String]) -> Result<Mlkg> {
        let keep = |x: &Labeled| {
            let labels: BTreeMap<String, String> =
                x.labels.iter().filter(|(l, _)| langs.contains(l)).map(|(l, s)| (l.clone(), s.clone())).collect();
            (!labels.is_empty()).then(|| Labeled { id: x.id.clone(), labels })
        };
        let entities: Vec<Entity> = self.entities.iter().filter_map(keep).collect();
        let relations: Vec<Relation> = self.relations.iter().filter_map(keep).collect();
        let ents: BTreeSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
        let rels: BTreeSet<&str> = relations.iter().map(|r| r.id.as_str()).collect();
        let triples = self
            .triples
            .iter()
            .filter(|t| ents.contains(t.head.as_str()) && ents.contains(t.tail.as_str()) && rels.contains(t.rel.as_str()))
            .cloned()
            .collect();
        Mlkg::new(entities, relations, triples)
    }
}

/// Sentence with a tagged entity mention.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub lang: String,
    pub entity: String,
    /// inclusive token span
    pub span: (usize, usize),
    pub tokens: Vec<String>,
}

/// Sentence realising a triple with the object span recorded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleSentence {
    pub lang: String,
    pub triple: Triple,
    /// inclusive token span of the object label
    pub span: (usize, usize),
    pub tokens: Vec<String>,
}

fn span_matches(tokens: &[String], span: (usize, usize), label: &str) -> bool {
    let (i, j) = span;
    i <= j && j < tokens.len() && tokens[i..=j].iter().map(String::as_str).eq(label.split_whitespace())
}

impl TaggedSentence {
    pub fn validate(&self, kg: &Mlkg) -> Result<()> {
        let e = kg.entity(&self.entity).ok_or_else(|| Error::Data(format!("unknown entity {}", self.entity)))?;
        let label = e
            .label(&self.lang)
            .ok_or_else(|| Error::Data(format!("entity {} has no {} label", self.entity, self.lang)))?;
        if !span_matches(&self.tokens, self.span, label) {
            return Err(Error::Data(format!("span {:?} does not spell {label:?}", self.span)));
        }
        Ok(())
    }
}

impl TripleSentence {
    pub fn validate(&self, kg: &Mlkg) -> Result<()> {
        kg.check_triple(&self.triple)?;
        let tail = kg.entity(&self.triple.tail).expect("checked");
        let label = tail
            .label(&self.lang)
            .ok_or_else(|| Error::Data(format!("entity {} has no {} label", tail.id, self.lang)))?;
        if !span_matches(&self.tokens, self.span, label) {
            return Err(Error::Data(format!("object span {:?} does not spell {label:?}", self.span)));
        }
        if self.span.1 - self.span.0 + 1 == self.tokens.len() {
            return Err(Error::Data("sentence consists of the object label only".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Sup")]
    Sup,
    #[serde(rename = "ZS-In")]
    ZsIn,
    #[serde(rename = "ZS-Un")]
    ZsUn,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Sup, Category::ZsIn, Category::ZsUn];

    pub fn name(self) -> &'static str {
        match self {
            Category::Sup => "Sup",
            Category::ZsIn => "ZS-In",
            Category::ZsUn => "ZS-Un",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Data(format!("unknown language category {s:?}")))
    }
}

/// Supervised, zero-shot-seen and zero-shot-unseen language sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSplit {
    pub sup: Vec<String>,
    pub zs_in: Vec<String>,
    pub zs_un: Vec<String>,
}

impl LanguageSplit {
    pub fn new(sup: Vec<String>, zs_in: Vec<String>, zs_un: Vec<String>) -> Result<Self> {
        let s = LanguageSplit { sup, zs_in, zs_un };
        let mut seen = BTreeSet::new();
        for l in s.sup.iter().chain(&s.zs_in).chain(&s.zs_un) {
            if !seen.insert(l) {
                return Err(Error::Config(format!("language {l} assigned to more than one category")));
            }
        }
        Ok(s)
    }

    pub fn category(&self, lang: &str) -> Option<Category> {
        let has = |v: &Vec<String>| v.iter().any(|l| l == lang);
        if has(&self.sup) {
            Some(Category::Sup)
        } else if has(&self.zs_in) {
            Some(Category::ZsIn)
        } else if has(&self.zs_un) {
            Some(Category::ZsUn)
        } else {
            None
        }
    }

    pub fn languages(&self, c: Category) -> &[String] {
        match c {
            Category::Sup => &self.sup,
            Category::ZsIn => &self.zs_in,
            Category::ZsUn => &self.zs_un,
        }
    }

    pub fn all(&self) -> Vec<String> {
        self.sup.iter().chain(&self.zs_in).chain(&self.zs_un).cloned().collect()
    }

    /// Languages whose data may feed adapter training.
    pub fn adapter_languages(&self) -> Vec<String> {
        self.sup.iter().chain(&self.zs_in).cloned().collect()
    }

    /// Languages whose data may feed task finetuning.
    pub fn finetune_languages(&self) -> Vec<String> {
        self.sup.clone()
    }
}

/// Entity-alignment query: retrieve `entity` in `tgt` from its `src` label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub src: String,
    pub tgt: String,
    pub entity: String,
}

/// Completion example: a triple posed in one language.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompletionItem {
    pub lang: String,
    pub triple: Triple,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(id: &str, labels: &[(&str, &str)]) -> Entity {
        Labeled::new(id, labels.iter().map(|(l, s)| (l.to_string(), s.to_string())))
    }

    pub(crate) fn toy() -> Mlkg {
        Mlkg::new(
            vec![
                ent("Q1", &[("en", "Zurich"), ("it", "Zurigo")]),
                ent("Q2", &[("en", "Switzerland"), ("it", "Svizzera")]),
                ent("Q3", &[("en", "Alain de Botton")]),
            ],
            vec![ent("P1", &[("en", "is located in"), ("it", "si trova in")])],
            vec![Triple::new("Q1", "P1", "Q2")],
        )
        .unwrap()
    }

    #[test]
    fn integrity_is_checked() {
        let kg = toy();
        assert_eq!(kg.stats().triples, 1);
        let err = Mlkg::new(kg.entities().to_vec(), kg.relations().to_vec(), vec![Triple::new("Q1", "P1", "Q9")]);
        assert!(err.is_err());
        let dup = Mlkg::new(vec![kg.entities()[0].clone(), kg.entities()[0].clone()], vec![], vec![]);
        assert!(dup.is_err());
    }

    #[test]
    fn restricting_languages_drops_orphans() {
        let kg = toy().restrict_languages(&["it".into()]).unwrap();
        assert_eq!(kg.entities().len(), 2);
        assert_eq!(kg.triples().len(), 1);
        assert_eq!(kg.languages().into_iter().collect::<Vec<_>>(), ["it"]);
    }

    #[test]
    fn sentence_spans_are_checked() {
        let kg = toy();
        let toks = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let c1 = TaggedSentence {
            lang: "en".into(),
            entity: "Q3".into(),
            span: (0, 2),
            tokens: toks("Alain de Botton spent his early years in Zurich"),
        };
        c1.validate(&kg).unwrap();
        let c2 = TripleSentence {
            lang: "en".into(),
            triple: Triple::new("Q1", "P1", "Q2"),
            span: (6, 6),
            tokens: toks("Zurich is the largest city in Switzerland"),
        };
        c2.validate(&kg).unwrap();
        let bare = TripleSentence { span: (0, 0), tokens: toks("Switzerland"), ..c2.clone() };
        assert!(bare.validate(&kg).is_err());
        let off = TripleSentence { span: (5, 5), ..c2 };
        assert!(off.validate(&kg).is_err());
    }

    #[test]
    fn split_categories() {
        let s = LanguageSplit::new(vec!["en".into()], vec!["it".into()], vec!["pt".into()]).unwrap();
        assert_eq!(s.category("it"), Some(Category::ZsIn));
        assert_eq!(s.adapter_languages(), ["en", "it"]);
        assert!(LanguageSplit::new(vec!["en".into()], vec!["en".into()], vec![]).is_err());
        assert_eq!("zs-un".parse::<Category>().unwrap(), Category::ZsUn);
    }
}
