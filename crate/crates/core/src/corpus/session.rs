use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::text;

/// Tag used when an annotation layer is missing from the input.
pub const NONE_TAG: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Lowercased, NFC-normalized surface.
    pub lower: String,
    pub pos: String,
    pub ner: String,
    pub dep: String,
}

impl Token {
    /// A token without annotations.
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let lower = text::normalize(&surface);
        Token {
            surface,
            lower,
            pos: NONE_TAG.to_owned(),
            ner: NONE_TAG.to_owned(),
            dep: NONE_TAG.to_owned(),
        }
    }

    pub fn with_tags(
        surface: impl Into<String>,
        pos: impl Into<String>,
        ner: impl Into<String>,
        dep: impl Into<String>,
    ) -> Self {
        Token {
            pos: pos.into(),
            ner: ner.into(),
            dep: dep.into(),
            ..Token::new(surface)
        }
    }

    /// Whitespace-tokenizes `text` into unannotated tokens.
    pub fn tokenize(text: &str) -> Vec<Token> {
        text.split_whitespace().map(Token::new).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnKind {
    Query,
    Click,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TurnBody {
    Query(Vec<Token>),
    Click(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub body: TurnBody,
}

impl Turn {
    pub fn kind(&self) -> TurnKind {
        match self.body {
            TurnBody::Query(_) => TurnKind::Query,
            TurnBody::Click(_) => TurnKind::Click,
        }
    }

    pub fn tokens(&self) -> Option<&[Token]> {
        match &self.body {
            TurnBody::Query(t) => Some(t),
            TurnBody::Click(_) => None,
        }
    }

    pub fn url(&self) -> Option<&str> {
        match &self.body {
            TurnBody::Click(u) => Some(u),
            TurnBody::Query(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Session {
    /// Builds a session, numbering turns from 0.
    pub fn new(id: impl Into<String>, bodies: Vec<TurnBody>) -> Self {
        Session {
            id: id.into(),
            turns: bodies
                .into_iter()
                .enumerate()
                .map(|(index, body)| Turn { index, body })
                .collect(),
        }
    }

    pub fn queries(&self) -> impl Iterator<Item = (usize, &[Token])> {
        self.turns
            .iter()
            .filter_map(|t| t.tokens().map(|tok| (t.index, tok)))
    }
}

/// A contiguous entity mention `[start, end)` over a query's tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
}

impl MentionSpan {
    pub fn new(start: usize, end: usize) -> Self {
        MentionSpan {
            start,
            end,
            entity_id: None,
            entity_type: None,
        }
    }

    pub fn typed(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        MentionSpan {
            entity_type: Some(entity_type.into()),
            ..MentionSpan::new(start, end)
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &MentionSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }
}

/// Per-turn labels carried by labeled and tagged session files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TurnAnnotation {
    pub bio: Option<Vec<String>>,
    pub spans: Option<Vec<MentionSpan>>,
    /// Click turns: the entity the URL resolved to.
    pub entity_id: Option<String>,
    pub entity_type: Option<String>,
    pub interpretations: Vec<serde_json::Value>,
}

impl TurnAnnotation {
    fn is_empty(&self) -> bool {
        *self == TurnAnnotation::default()
    }
}

/// A session plus optional per-turn annotations, aligned with `session.turns`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session: Session,
    pub annotations: Vec<TurnAnnotation>,
}

impl SessionRecord {
    pub fn unlabeled(session: Session) -> Self {
        let annotations = vec![TurnAnnotation::default(); session.turns.len()];
        SessionRecord {
            session,
            annotations,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSession {
    id: String,
    #[serde(default)]
    turns: Vec<RawTurn>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawTurn {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ner: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dep: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bio: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<MentionSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entity_id: Option<String>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    entity_type: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interpretations: Vec<serde_json::Value>,
}

/// Parses one session-log line. Blank lines yield `None`.
pub fn parse_session_line(line_no: usize, line: &str) -> Result<Option<SessionRecord>> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let raw: RawSession =
        serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
    let fail = |msg: String| Error::Format {
        line: line_no,
        record: raw.id.clone(),
        message: msg,
    };

    let mut turns = Vec::with_capacity(raw.turns.len());
    let mut annotations = Vec::with_capacity(raw.turns.len());
    for (index, rt) in raw.turns.iter().enumerate() {
        let body = match rt.kind.as_str() {
            "Q" => {
                if rt.url.is_some() {
                    return Err(fail(format!("query turn {index} carries a url")));
                }
                let text = rt.text.as_deref().unwrap_or("");
                let surfaces: Vec<&str> = text.split_whitespace().collect();
                if surfaces.is_empty() {
                    return Err(fail(format!("query turn {index} has no tokens")));
                }
                let layer = |name: &str, v: &Option<Vec<String>>| -> Result<Vec<String>> {
                    match v {
                        None => Ok(vec![NONE_TAG.to_owned(); surfaces.len()]),
                        Some(tags) if tags.len() == surfaces.len() => Ok(tags.clone()),
                        Some(tags) => Err(fail(format!(
                            "turn {index}: {name} has {} tags for {} tokens",
                            tags.len(),
                            surfaces.len()
                        ))),
                    }
                };
                let pos = layer("pos", &rt.pos)?;
                let ner = layer("ner", &rt.ner)?;
                let dep = layer("dep", &rt.dep)?;
                let tokens = surfaces
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Token::with_tags(*s, &pos[i], &ner[i], &dep[i]))
                    .collect();
                TurnBody::Query(tokens)
            }
            "C" => {
                if rt.text.is_some() || rt.pos.is_some() || rt.ner.is_some() || rt.dep.is_some()
                {
                    return Err(fail(format!("click turn {index} carries a token payload")));
                }
                match &rt.url {
                    Some(u) if !u.trim().is_empty() => TurnBody::Click(u.trim().to_owned()),
                    _ => return Err(fail(format!("click turn {index} has no url"))),
                }
            }
            other => return Err(fail(format!("turn {index}: unknown kind {other:?}"))),
        };
        if let (TurnBody::Query(tokens), Some(bio)) = (&body, &rt.bio) {
            if bio.len() != tokens.len() {
                return Err(fail(format!("turn {index}: bio length mismatch")));
            }
        }
        if let (TurnBody::Query(tokens), Some(spans)) = (&body, &rt.spans) {
            if spans.iter().any(|s| s.start >= s.end || s.end > tokens.len()) {
                return Err(fail(format!("turn {index}: span out of bounds")));
            }
        }
        turns.push(Turn { index, body });
        annotations.push(TurnAnnotation {
            bio: rt.bio.clone(),
            spans: rt.spans.clone(),
            entity_id: rt.entity_id.clone(),
            entity_type: rt.entity_type.clone(),
            interpretations: rt.interpretations.clone(),
        });
    }
    Ok(Some(SessionRecord {
        session: Session { id: raw.id, turns },
        annotations,
    }))
}

/// Streams session records from a line-delimited log.
pub struct SessionLogReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> SessionLogReader<R> {
    pub fn new(reader: R) -> Self {
        SessionLogReader {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for SessionLogReader<R> {
    type Item = Result<SessionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            match parse_session_line(self.line_no, &line) {
                Ok(Some(rec)) => return Some(Ok(rec)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Parses a whole session log, dropping annotations.
pub fn parse_session_log<R: BufRead>(reader: R) -> Result<Vec<Session>> {
    SessionLogReader::new(reader)
        .map(|r| r.map(|rec| rec.session))
        .collect()
}

/// Reads every record, parsing lines in parallel. Order follows the input and
/// the first error by line number is returned.
pub fn read_records<R: BufRead>(reader: R, exec: Execution) -> Result<Vec<SessionRecord>> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let parsed = par::map_range(exec, lines.len(), |i| parse_session_line(i + 1, &lines[i]));
    let mut out = Vec::with_capacity(parsed.len());
    for p in parsed {
        if let Some(rec) = p? {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Encodes a record as one JSON line (no trailing newline).
pub fn write_record(rec: &SessionRecord) -> String {
    let turns = rec
        .session
        .turns
        .iter()
        .enumerate()
        .map(|(i, turn)| {
            let ann = rec.annotations.get(i).filter(|a| !a.is_empty());
            let mut raw = match &turn.body {
                TurnBody::Query(tokens) => {
                    let layer = |f: fn(&Token) -> &str| {
                        let v: Vec<String> = tokens.iter().map(|t| f(t).to_owned()).collect();
                        v.iter().any(|t| t != NONE_TAG).then_some(v)
                    };
                    RawTurn {
                        kind: "Q".to_owned(),
                        text: Some(
                            tokens
                                .iter()
                                .map(|t| t.surface.as_str())
                                .collect::<Vec<_>>()
                                .join(" "),
                        ),
                        pos: layer(|t| &t.pos),
                        ner: layer(|t| &t.ner),
                        dep: layer(|t| &t.dep),
                        ..RawTurn::default()
                    }
                }
                TurnBody::Click(url) => RawTurn {
                    kind: "C".to_owned(),
                    url: Some(url.clone()),
                    ..RawTurn::default()
                },
            };
            if let Some(a) = ann {
                raw.bio = a.bio.clone();
                raw.spans = a.spans.clone();
                raw.entity_id = a.entity_id.clone();
                raw.entity_type = a.entity_type.clone();
                raw.interpretations = a.interpretations.clone();
            }
            raw
        })
        .collect();
    let raw = RawSession {
        id: rec.session.id.clone(),
        turns,
    };
    serde_json::to_string(&raw).expect("session records always serialize")
}

pub fn write_session(session: &Session) -> String {
    write_record(&SessionRecord::unlabeled(session.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fig1_two_turns() {
        let line = r#"{"id":"s1","turns":[{"kind":"Q","text":"the great gatsby 2013"},{"kind":"C","url":"www.imdb.com/title/tt1343092/"}]}"#;
        let sessions = parse_session_log(line.as_bytes()).unwrap();
        assert_eq!(sessions.len(), 1);
        let kinds: Vec<_> = sessions[0].turns.iter().map(Turn::kind).collect();
        assert_eq!(kinds, vec![TurnKind::Query, TurnKind::Click]);
        let toks = sessions[0].turns[0].tokens().unwrap();
        assert_eq!(toks.len(), 4);
        assert_eq!(toks[0].pos, NONE_TAG);
        assert_eq!(sessions[0].turns[1].index, 1);
    }

    #[test]
    fn empty_stream() {
        assert!(parse_session_log("".as_bytes()).unwrap().is_empty());
        assert!(read_records("\n\n".as_bytes(), Execution::Parallel)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn click_with_tokens_is_rejected() {
        let log = "{\"id\":\"ok\",\"turns\":[]}\n{\"id\":\"bad7\",\"turns\":[{\"kind\":\"C\",\"url\":\"a.com\",\"text\":\"x y\"}]}";
        let err = parse_session_log(log.as_bytes()).unwrap_err();
        match err {
            Error::Format { line, record, .. } => {
                assert_eq!(line, 2);
                assert_eq!(record, "bad7");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let log = "{\"id\":\"a\",\"turns\":[]}\n{not json";
        assert!(matches!(
            parse_session_log(log.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn annotation_length_mismatch() {
        let log = r#"{"id":"a","turns":[{"kind":"Q","text":"a b","pos":["DT"]}]}"#;
        assert!(matches!(
            parse_session_log(log.as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn annotations_round_trip() {
        let line = r#"{"id":"s","turns":[{"kind":"Q","text":"Movies by Leo","pos":["NNS","IN","NNP"],"bio":["O","O","B-ENT"],"spans":[{"start":2,"end":3,"type":"actor"}]},{"kind":"C","url":"imdb.com/name/nm1/","entity_id":"e1","type":"actor"}]}"#;
        let rec = parse_session_line(1, line).unwrap().unwrap();
        assert_eq!(rec.session.turns[0].tokens().unwrap()[0].lower, "movies");
        assert_eq!(rec.annotations[1].entity_type.as_deref(), Some("actor"));
        let again = parse_session_line(1, &write_record(&rec)).unwrap().unwrap();
        assert_eq!(again, rec);
    }

    fn arb_token() -> impl Strategy<Value = Token> {
        (
            "[A-Za-z0-9']{1,6}",
            prop::option::of("[A-Z]{2,3}"),
            prop::option::of("[A-Z]{1,4}"),
        )
            .prop_map(|(s, pos, ner)| {
                Token::with_tags(
                    s,
                    pos.unwrap_or_else(|| NONE_TAG.into()),
                    ner.unwrap_or_else(|| NONE_TAG.into()),
                    NONE_TAG,
                )
            })
    }

    fn arb_session() -> impl Strategy<Value = Session> {
        let body = prop_oneof![
            prop::collection::vec(arb_token(), 1..5).prop_map(TurnBody::Query),
            "[a-z]{1,8}\\.com/[a-z0-9/]{0,10}".prop_map(TurnBody::Click),
        ];
        ("[a-z0-9]{1,8}", prop::collection::vec(body, 0..6))
            .prop_map(|(id, bodies)| Session::new(id, bodies))
    }

    proptest! {
        #[test]
        fn parse_inverts_write(sessions in prop::collection::vec(arb_session(), 0..5)) {
            let text: String = sessions.iter().map(|s| write_session(s) + "\n").collect();
            let back = parse_session_log(text.as_bytes()).unwrap();
            prop_assert_eq!(back, sessions);
        }
    }
}
