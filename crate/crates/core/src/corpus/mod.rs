//! On-disk formats: session logs, knowledge files and model files.

mod knowledge;
mod model_file;
mod session;

pub use knowledge::{EntityRecord, KnowledgeStore, KnowledgeStoreBuilder, Relation};
pub use model_file::{ModelEntry, ModelFile, ModelKind};
pub use session::{
    parse_session_line, parse_session_log, read_records, write_record, write_session,
    MentionSpan, Session, SessionLogReader, SessionRecord, Token, Turn, TurnAnnotation,
    TurnBody, TurnKind, NONE_TAG,
};
