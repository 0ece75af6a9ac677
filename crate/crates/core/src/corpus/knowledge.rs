use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::distsup::resolve_entity_type;
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub id: String,
    /// Lowercased name tokens.
    pub name: Vec<String>,
    pub entity_type: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Relation {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

/// Gazetteer, relation triples, URL map and type lexicon.
///
/// Immutable once built. Construction is order-independent: every collapse
/// rule (type resolution, homonyms, duplicate rows) picks by count and then
/// lexicographically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeStore {
    entities: BTreeMap<String, EntityRecord>,
    names: HashMap<Vec<String>, String>,
    max_name_len: usize,
    relations: BTreeSet<Relation>,
    by_entity: HashMap<String, Vec<(String, String)>>,
    url_map: HashMap<String, String>,
    type_lexicon: HashMap<String, String>,
}

impl KnowledgeStore {
    pub fn builder() -> KnowledgeStoreBuilder {
        KnowledgeStoreBuilder::default()
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    pub fn entity_type(&self, id: &str) -> Option<&str> {
        self.entities.get(id).map(|e| e.entity_type.as_str())
    }

    /// Looks up a lowercased token sequence.
    pub fn lookup_name(&self, name: &[String]) -> Option<&EntityRecord> {
        self.names.get(name).and_then(|id| self.entities.get(id))
    }

    pub fn max_name_len(&self) -> usize {
        self.max_name_len
    }

    pub fn name_count(&self) -> usize {
        self.names.len()
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn has_triple(&self, subject: &str, relation: &str, object: &str) -> bool {
        self.relations.contains(&Relation {
            subject: subject.to_owned(),
            relation: relation.to_owned(),
            object: object.to_owned(),
        })
    }

    /// Relations between `a` and `b` in either direction, sorted.
    pub fn relations_between(&self, a: &str, b: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .by_entity
            .get(a)
            .into_iter()
            .flatten()
            .filter(|(_, other)| other == b)
            .map(|(r, _)| r.as_str())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `(relation, other entity)` for every triple touching `id`, in either
    /// direction.
    pub fn neighbors(&self, id: &str) -> &[(String, String)] {
        self.by_entity.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Longest registered prefix of the normalized URL.
    pub fn url_entity(&self, url: &str) -> Option<&str> {
        let url = text::normalize_url(url);
        url.char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(url.len()))
            .rev()
            .filter(|&i| i > 0)
            .find_map(|i| self.url_map.get(&url[..i]))
            .map(String::as_str)
    }

    pub fn url_prefix_count(&self) -> usize {
        self.url_map.len()
    }

    pub fn type_of_word(&self, word: &str) -> Option<&str> {
        self.type_lexicon.get(word).map(String::as_str)
    }

    /// Loads `gazetteer.tsv`, `relations.tsv`, `urlmap.tsv` and `typelex.tsv`
    /// from `dir`. Missing files other than the gazetteer are treated as empty.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let open = |name: &str, required: bool| -> Result<Box<dyn BufRead>> {
            let path = dir.join(name);
            match File::open(&path) {
                Ok(f) => Ok(Box::new(BufReader::new(f))),
                Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => {
                    Ok(Box::new(std::io::empty()))
                }
                Err(e) => Err(Error::Load(format!("{}: {e}", path.display()))),
            }
        };
        Self::parse(
            open("gazetteer.tsv", true)?,
            open("relations.tsv", false)?,
            open("urlmap.tsv", false)?,
            open("typelex.tsv", false)?,
        )
    }

    /// Parses the four TSV files.
    pub fn parse(
        gazetteer: impl BufRead,
        relations: impl BufRead,
        urlmap: impl BufRead,
        typelex: impl BufRead,
    ) -> Result<Self> {
        let mut b = KnowledgeStore::builder();
        for_each_row(gazetteer, "gazetteer", 4, |line, cols| {
            let count: u64 = cols[3]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("gazetteer: bad count {:?}", cols[3])))?;
            b.gazetteer_row(cols[0], cols[1], cols[2], count);
            Ok(())
        })?;
        for_each_row(relations, "relations", 3, |_, cols| {
            b.relation(cols[0], cols[1], cols[2]);
            Ok(())
        })?;
        for_each_row(urlmap, "urlmap", 2, |_, cols| {
            b.url(cols[0], cols[1]);
            Ok(())
        })?;
        for_each_row(typelex, "typelex", 2, |_, cols| {
            b.type_word(cols[0], cols[1]);
            Ok(())
        })?;
        b.build()
    }

    /// Writes the store in the layout read by [`KnowledgeStore::load_dir`].
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut gaz = Vec::new();
        for e in self.entities.values() {
            writeln!(gaz, "{}\t{}\t{}\t{}", e.name.join(" "), e.entity_type, e.id, e.count)?;
        }
        std::fs::write(dir.join("gazetteer.tsv"), gaz)?;
        let mut rel = Vec::new();
        for r in &self.relations {
            writeln!(rel, "{}\t{}\t{}", r.subject, r.relation, r.object)?;
        }
        std::fs::write(dir.join("relations.tsv"), rel)?;
        let mut urls: Vec<_> = self.url_map.iter().collect();
        urls.sort();
        let mut out = Vec::new();
        for (prefix, id) in urls {
            writeln!(out, "{prefix}\t{id}")?;
        }
        std::fs::write(dir.join("urlmap.tsv"), out)?;
        let mut words: Vec<_> = self.type_lexicon.iter().collect();
        words.sort();
        let mut out = Vec::new();
        for (w, t) in words {
            writeln!(out, "{w}\t{t}")?;
        }
        std::fs::write(dir.join("typelex.tsv"), out)?;
        Ok(())
    }
}

fn for_each_row(
    reader: impl BufRead,
    what: &str,
    columns: usize,
    mut f: impl FnMut(usize, &[&str]) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != columns {
            return Err(Error::parse(
                i + 1,
                format!("{what}: expected {columns} columns, found {}", cols.len()),
            ));
        }
        f(i + 1, &cols)?;
    }
    Ok(())
}

/// Accumulates raw rows; [`build`](Self::build) validates and collapses them.
#[derive(Debug, Default)]
pub struct KnowledgeStoreBuilder {
    gazetteer: Vec<(Vec<String>, String, String, u64)>,
    relations: Vec<(String, String, String)>,
    urls: Vec<(String, String)>,
    type_words: Vec<(String, String)>,
}

impl KnowledgeStoreBuilder {
    pub fn gazetteer_row(&mut self, name: &str, entity_type: &str, id: &str, count: u64) -> &mut Self {
        self.gazetteer.push((
            text::normalized_tokens(name),
            text::normalize(entity_type.trim()),
            id.trim().to_owned(),
            count,
        ));
        self
    }

    pub fn relation(&mut self, subject: &str, relation: &str, object: &str) -> &mut Self {
        self.relations.push((
            subject.trim().to_owned(),
            text::normalize(relation.trim()),
            object.trim().to_owned(),
        ));
        self
    }

    pub fn url(&mut self, prefix: &str, id: &str) -> &mut Self {
        self.urls
            .push((text::normalize_url(prefix), id.trim().to_owned()));
        self
    }

    pub fn type_word(&mut self, word: &str, entity_type: &str) -> &mut Self {
        self.type_words
            .push((text::normalize(word.trim()), text::normalize(entity_type.trim())));
        self
    }

    pub fn build(&self) -> Result<KnowledgeStore> {
        // id -> (name, type -> max count)
        let mut by_id: BTreeMap<&str, (&Vec<String>, BTreeMap<&str, u64>)> = BTreeMap::new();
        for (name, ty, id, count) in &self.gazetteer {
            if name.is_empty() || id.is_empty() || ty.is_empty() {
                return Err(Error::Load(format!("gazetteer: empty field for entity {id:?}")));
            }
            if *count < 1 {
                return Err(Error::Load(format!("gazetteer: entity {id} has count 0")));
            }
            let entry = by_id.entry(id).or_insert_with(|| (name, BTreeMap::new()));
            if entry.0 != name {
                return Err(Error::Load(format!(
                    "entity {id} listed with conflicting names {:?} and {:?}",
                    entry.0.join(" "),
                    name.join(" ")
                )));
            }
            let c = entry.1.entry(ty.as_str()).or_insert(0);
            *c = (*c).max(*count);
        }

        let mut entities = BTreeMap::new();
        for (id, (name, types)) in by_id {
            let candidates: Vec<(String, u64)> =
                types.iter().map(|(t, c)| (t.to_string(), *c)).collect();
            let entity_type = resolve_entity_type(&candidates)?;
            let count = types[entity_type.as_str()];
            entities.insert(
                id.to_owned(),
                EntityRecord {
                    id: id.to_owned(),
                    name: name.clone(),
                    entity_type,
                    count,
                },
            );
        }

        // Homonyms: the name resolves to the most frequent entity.
        let mut names: HashMap<Vec<String>, String> = HashMap::new();
        for e in entities.values() {
            match names.get_mut(&e.name) {
                Some(current) => {
                    let cur = &entities[current.as_str()];
                    if (e.count, std::cmp::Reverse(&e.id)) > (cur.count, std::cmp::Reverse(&cur.id)) {
                        *current = e.id.clone();
                    }
                }
                None => {
                    names.insert(e.name.clone(), e.id.clone());
                }
            }
        }
        let max_name_len = names.keys().map(Vec::len).max().unwrap_or(0);

        let mut relations = BTreeSet::new();
        for (s, r, o) in &self.relations {
            for end in [s, o] {
                if !entities.contains_key(end.as_str()) {
                    return Err(Error::Load(format!(
                        "relation ({s}, {r}, {o}) references unknown entity {end}"
                    )));
                }
            }
            relations.insert(Relation {
                subject: s.clone(),
                relation: r.clone(),
                object: o.clone(),
            });
        }
        let mut by_entity: HashMap<String, Vec<(String, String)>> = HashMap::new();
        for rel in &relations {
            by_entity
                .entry(rel.subject.clone())
                .or_default()
                .push((rel.relation.clone(), rel.object.clone()));
            if rel.object != rel.subject {
                by_entity
                    .entry(rel.object.clone())
                    .or_default()
                    .push((rel.relation.clone(), rel.subject.clone()));
            }
        }

        let mut url_map: HashMap<String, String> = HashMap::new();
        for (prefix, id) in &self.urls {
            if prefix.is_empty() {
                return Err(Error::Load("urlmap: empty prefix".into()));
            }
            if let Some(prev) = url_map.insert(prefix.clone(), id.clone()) {
                if prev != *id {
                    return Err(Error::Load(format!(
                        "urlmap: prefix {prefix} maps to both {prev} and {id}"
                    )));
                }
            }
        }

        let mut type_lexicon: HashMap<String, String> = HashMap::new();
        for (word, ty) in &self.type_words {
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::Load(format!("typelex: {word:?} is not a single word")));
            }
            if let Some(prev) = type_lexicon.insert(word.clone(), ty.clone()) {
                if prev != *ty {
                    return Err(Error::Load(format!(
                        "typelex: {word} maps to both {prev} and {ty}"
                    )));
                }
            }
        }

        Ok(KnowledgeStore {
            entities,
            names,
            max_name_len,
            relations,
            by_entity,
            url_map,
            type_lexicon,
        })
    }
}
