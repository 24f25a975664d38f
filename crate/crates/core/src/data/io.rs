//! Line-oriented, tab-separated file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::types::{AlignmentPair, Category, CompletionItem, Labeled, LanguageSplit, Mlkg, TaggedSentence, Triple, TripleSentence};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Calls `f(line_number, fields)` for every non-empty line.
fn read_rows<F>(path: &Path, mut f: F) -> Result<()>
where
    F: FnMut(usize, Vec<&str>) -> std::result::Result<(), String>,
{
    let text = fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        f(i + 1, line.split('\t').collect()).map_err(|m| parse_err(path, i + 1, m))?;
    }
    Ok(())
}

fn expect_fields(fields: &[&str], n: usize) -> std::result::Result<(), String> {
    if fields.len() != n {
        return Err(format!("expected {n} tab-separated fields, found {}", fields.len()));
    }
    Ok(())
}

fn parse_index(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("invalid token index {s:?}"))
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn load_labeled(path: &Path) -> Result<Vec<Labeled>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 2)?;
        let mut labels = Vec::new();
        for pair in f[1].split('|') {
            let (lang, label) = pair.split_once('=').ok_or_else(|| format!("expected lang=label, got {pair:?}"))?;
            labels.push((lang.to_string(), label.to_string()));
        }
        let n = labels.len();
        let item = Labeled::new(f[0], labels);
        if item.labels.len() != n {
            return Err(format!("{}: repeated language", f[0]));
        }
        out.push(item);
        Ok(())
    })?;
    Ok(out)
}

pub fn save_labeled(path: &Path, items: &[Labeled]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        let labels: Vec<String> = it.labels.iter().map(|(l, t)| format!("{l}={t}")).collect();
        writeln!(s, "{}\t{}", it.id, labels.join("|")).expect("writing to a string");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_triples(path: &Path) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 3)?;
        out.push(Triple::new(f[0], f[1], f[2]));
        Ok(())
    })?;
    Ok(out)
}

pub fn save_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut s = String::new();
    for t in triples {
        writeln!(s, "{}\t{}\t{}", t.head, t.rel, t.tail).expect("writing to a string");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Loads and validates a graph. Dangling triple ids are reported with the
/// offending line.
pub fn load_mlkg(entities: &Path, relations: &Path, triples: &Path) -> Result<Mlkg> {
    let kg = Mlkg::new(load_labeled(entities)?, load_labeled(relations)?, Vec::new())?;
    let mut ts = Vec::new();
    read_rows(triples, |_, f| {
        expect_fields(&f, 3)?;
        let t = Triple::new(f[0], f[1], f[2]);
        kg.check_triple(&t).map_err(|e| e.to_string())?;
        ts.push(t);
        Ok(())
    })?;
    Mlkg::new(kg.entities().to_vec(), kg.relations().to_vec(), ts)
}

pub fn save_mlkg(kg: &Mlkg, entities: &Path, relations: &Path, triples: &Path) -> Result<()> {
    save_labeled(entities, kg.entities())?;
    save_labeled(relations, kg.relations())?;
    save_triples(triples, kg.triples())
}

pub fn load_c1(path: &Path) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 5)?;
        out.push(TaggedSentence {
            lang: f[0].to_string(),
            entity: f[1].to_string(),
            span: (parse_index(f[2])?, parse_index(f[3])?),
            tokens: tokens(f[4]),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_c1(path: &Path, records: &[TaggedSentence]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        writeln!(s, "{}\t{}\t{}\t{}\t{}", r.lang, r.entity, r.span.0, r.span.1, r.tokens.join(" ")).expect("string");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Triple-sentence files carry no language column; all records get `lang`.
pub fn load_c2(path: &Path, lang: &str) -> Result<Vec<TripleSentence>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 6)?;
        out.push(TripleSentence {
            lang: lang.to_string(),
            triple: Triple::new(f[0], f[1], f[2]),
            span: (parse_index(f[3])?, parse_index(f[4])?),
            tokens: tokens(f[5]),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_c2(path: &Path, records: &[TripleSentence]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        let t = &r.triple;
        writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", t.head, t.rel, t.tail, r.span.0, r.span.1, r.tokens.join(" "))
            .expect("string");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<LanguageSplit> {
    let (mut sup, mut zs_in, mut zs_un) = (Vec::new(), Vec::new(), Vec::new());
    read_rows(path, |_, f| {
        expect_fields(&f, 2)?;
        let c: Category = f[0].parse().map_err(|e: Error| e.to_string())?;
        match c {
            Category::Sup => sup.push(f[1].to_string()),
            Category::ZsIn => zs_in.push(f[1].to_string()),
            Category::ZsUn => zs_un.push(f[1].to_string()),
        }
        Ok(())
    })?;
    LanguageSplit::new(sup, zs_in, zs_un)
}

pub fn save_split(path: &Path, split: &LanguageSplit) -> Result<()> {
    let mut s = String::new();
    for c in Category::ALL {
        for l in split.languages(c) {
            writeln!(s, "{c}\t{l}").expect("string");
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Plain text corpus, one `lang<TAB>sentence` per line.
pub fn load_corpus(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 2)?;
        out.push((f[0].to_string(), f[1].to_string()));
        Ok(())
    })?;
    Ok(out)
}

pub fn save_corpus(path: &Path, lines: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (l, t) in lines {
        writeln!(s, "{l}\t{t}").expect("string");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_alignment(path: &Path) -> Result<Vec<AlignmentPair>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 3)?;
        out.push(AlignmentPair { src: f[0].into(), tgt: f[1].into(), entity: f[2].into() });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_alignment(path: &Path, pairs: &[AlignmentPair]) -> Result<()> {
    let mut s = String::new();
    for p in pairs {
        writeln!(s, "{}\t{}\t{}", p.src, p.tgt, p.entity).expect("string");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_completion(path: &Path) -> Result<Vec<CompletionItem>> {
    let mut out = Vec::new();
    read_rows(path, |_, f| {
        expect_fields(&f, 4)?;
        out.push(CompletionItem { lang: f[0].into(), triple: Triple::new(f[1], f[2], f[3]) });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_completion(path: &Path, items: &[CompletionItem]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        let t = &it.triple;
        writeln!(s, "{}\t{}\t{}\t{}", it.lang, t.head, t.rel, t.tail).expect("string");
    }
    fs::write(path, s)?;
    Ok(())
}
