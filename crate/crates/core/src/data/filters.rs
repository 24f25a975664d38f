use std::collections::{BTreeMap, BTreeSet};

use super::types::{Mlkg, TaggedSentence, Triple};
use crate::error::Result;

/// Keeps entities with strictly more than `min_labels` labels, then drops
/// triples that lost an endpoint.
pub fn filter_entities(kg: &Mlkg, min_labels: usize) -> Result<Mlkg> {
    let entities: Vec<_> = kg.entities().iter().filter(|e| e.labels.len() > min_labels).cloned().collect();
    let surviving: BTreeSet<String> = entities.iter().map(|e| e.id.clone()).collect();
    let triples = filter_triples(kg.triples(), &surviving);
    Mlkg::new(entities, kg.relations().to_vec(), triples)
}

/// Triples whose head and tail both survive.
pub fn filter_triples(triples: &[Triple], surviving: &BTreeSet<String>) -> Vec<Triple> {
    triples.iter().filter(|t| surviving.contains(&t.head) && surviving.contains(&t.tail)).cloned().collect()
}

/// Keeps the sentences of entities described in at least `min_langs`
/// distinct languages.
pub fn filter_descriptions(records: &[TaggedSentence], min_langs: usize) -> Vec<TaggedSentence> {
    let mut langs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        langs.entry(&r.entity).or_default().insert(&r.lang);
    }
    records.iter().filter(|r| langs[r.entity.as_str()].len() >= min_langs).cloned().collect()
}

/// A record found in a language it must not contain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditFinding {
    pub source: String,
    pub index: usize,
    pub lang: String,
}

/// Flags every record whose language is in `forbidden`.
pub fn audit_languages<'a, I>(source: &str, langs: I, forbidden: &[String]) -> Vec<AuditFinding>
where
    I: IntoIterator<Item = &'a str>,
{
    langs
        .into_iter()
        .enumerate()
        .filter(|(_, l)| forbidden.iter().any(|f| f == l))
        .map(|(index, l)| AuditFinding { source: source.to_string(), index, lang: l.to_string() })
        .collect()
}

/// Every label language in the graph, one entry per label.
pub fn label_languages(kg: &Mlkg) -> Vec<&str> {
    kg.entities().iter().chain(kg.relations()).flat_map(|e| e.labels.keys().map(String::as_str)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::Labeled;

    fn kg_with_counts(counts: &[usize]) -> Mlkg {
        let entities = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| Labeled::new(format!("Q{i}"), (0..n).map(|l| (format!("l{l}"), format!("e{i}")))))
            .collect();
        let rel = Labeled::new("P0", [("l0".to_string(), "r".to_string())]);
        let triples = (1..counts.len()).map(|i| Triple::new("Q0", "P0", format!("Q{i}"))).collect();
        Mlkg::new(entities, vec![rel], triples).unwrap()
    }

    #[test]
    fn strict_label_threshold() {
        let kg = kg_with_counts(&[11, 10, 12]);
        let f = filter_entities(&kg, 10).unwrap();
        let ids: Vec<_> = f.entities().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["Q0", "Q2"]);
        assert_eq!(f.triples(), [Triple::new("Q0", "P0", "Q2")]);
        assert_eq!(filter_entities(&kg, 0).unwrap(), kg);
    }

    #[test]
    fn triples_need_both_endpoints() {
        let t = vec![Triple::new("a", "r", "b"), Triple::new("a", "r", "c")];
        let keep: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(filter_triples(&t, &keep), [Triple::new("a", "r", "b")]);
    }

    #[test]
    fn description_language_threshold() {
        let rec = |e: &str, l: &str| TaggedSentence { lang: l.into(), entity: e.into(), span: (0, 0), tokens: vec![e.into()] };
        let recs = vec![rec("Q1", "en"), rec("Q1", "it"), rec("Q2", "en"), rec("Q2", "en")];
        let kept = filter_descriptions(&recs, 2);
        assert_eq!(kept, recs[..2]);
        assert_eq!(filter_descriptions(&recs, 1), recs);
    }

    #[test]
    fn audit_flags_forbidden_languages() {
        let f = audit_languages("c1", ["en", "pt", "it", "pt"], &["pt".to_string()]);
        assert_eq!(f.iter().map(|x| x.index).collect::<Vec<_>>(), [1, 3]);
    }
}
