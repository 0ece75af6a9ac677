use indexmap::IndexSet;

/// Bidirectional name ↔ dense index map.
///
/// Indices are contiguous from 0 in insertion order. A frozen alphabet
/// ignores new names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alphabet {
    names: IndexSet<String>,
    frozen: bool,
}

impl Alphabet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Alphabet {
            names: names.into_iter().map(Into::into).collect(),
            frozen: false,
        }
    }

    /// Index of `name`, inserting it unless frozen.
    pub fn intern(&mut self, name: &str) -> Option<usize> {
        if let Some(i) = self.names.get_index_of(name) {
            return Some(i);
        }
        if self.frozen {
            return None;
        }
        Some(self.names.insert_full(name.to_owned()).0)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.get_index_of(name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get_index(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}
