use std::fmt;

/// Per-minute annotation: apnea (`A`) or normal breathing (`N`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    N,
    A,
}

impl Label {
    /// Class index used by the classifier (N = 0, A = 1).
    pub fn index(self) -> usize {
        match self {
            Label::N => 0,
            Label::A => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::N
        } else {
            Label::A
        }
    }

    pub fn is_apnea(self) -> bool {
        self == Label::A
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(Label::A),
            'N' => Some(Label::N),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Label::N => 'N',
            Label::A => 'A',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}
