//! Topic names, topic filters and the content check.
//!
//! Topics are `/`-separated level lists. Filters may use `+` for exactly one
//! level and a trailing `#` for any remaining levels, including none, so
//! `a/#` matches `a`. Level comparison is case-sensitive.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub const LEVEL_SEPARATOR: char = '/';
pub const SINGLE_LEVEL_WILDCARD: &str = "+";
pub const MULTI_LEVEL_WILDCARD: &str = "#";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("empty level at position {0}")]
    EmptyLevel(usize),
    #[error("wildcard '{0}' not allowed in a topic name")]
    WildcardInTopic(String),
    #[error("'#' must be the last level of a filter")]
    MisplacedMultiLevel,
    #[error("level '{0}' mixes wildcards with other characters")]
    InvalidWildcardLevel(String),
}

/// A concrete topic a message is published to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic {
    levels: Arc<[String]>,
}

impl Topic {
    pub fn parse(text: &str) -> Result<Self, TopicError> {
        if text.is_empty() {
            return Err(TopicError::Empty);
        }
        let levels = text
            .split(LEVEL_SEPARATOR)
            .enumerate()
            .map(|(i, level)| {
                if level.is_empty() {
                    Err(TopicError::EmptyLevel(i))
                } else if level.contains(['+', '#']) {
                    Err(TopicError::WildcardInTopic(level.to_string()))
                } else {
                    Ok(level.to_string())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Topic { levels: levels.into() })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }
}

impl FromStr for Topic {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::parse(s)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.levels.join("/"))
    }
}

/// One level of a topic filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterLevel {
    Literal(String),
    /// `+`
    SingleLevel,
    /// `#`
    MultiLevel,
}

impl FilterLevel {
    /// The label of the topic-tree node this level maps to.
    pub fn as_str(&self) -> &str {
        match self {
            FilterLevel::Literal(s) => s,
            FilterLevel::SingleLevel => SINGLE_LEVEL_WILDCARD,
            FilterLevel::MultiLevel => MULTI_LEVEL_WILDCARD,
        }
    }
}

/// A subscription's topic filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter {
    levels: Arc<[FilterLevel]>,
}

impl TopicFilter {
    pub fn parse(text: &str) -> Result<Self, TopicError> {
        if text.is_empty() {
            return Err(TopicError::Empty);
        }
        let parts: Vec<&str> = text.split(LEVEL_SEPARATOR).collect();
        let last = parts.len() - 1;
        let levels = parts
            .iter()
            .enumerate()
            .map(|(i, level)| match *level {
                "" => Err(TopicError::EmptyLevel(i)),
                "+" => Ok(FilterLevel::SingleLevel),
                "#" if i == last => Ok(FilterLevel::MultiLevel),
                "#" => Err(TopicError::MisplacedMultiLevel),
                l if l.contains(['+', '#']) => Err(TopicError::InvalidWildcardLevel(l.to_string())),
                l => Ok(FilterLevel::Literal(l.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TopicFilter { levels: levels.into() })
    }

    pub fn levels(&self) -> &[FilterLevel] {
        &self.levels
    }

    pub fn has_wildcards(&self) -> bool {
        self.levels.iter().any(|l| !matches!(l, FilterLevel::Literal(_)))
    }

    /// The content check.
    pub fn matches(&self, topic: &Topic) -> bool {
        let topic = topic.levels();
        for (i, level) in self.levels.iter().enumerate() {
            match level {
                FilterLevel::MultiLevel => return true,
                FilterLevel::SingleLevel => {
                    if i >= topic.len() {
                        return false;
                    }
                }
                FilterLevel::Literal(l) => {
                    if topic.get(i) != Some(l) {
                        return false;
                    }
                }
            }
        }
        self.levels.len() == topic.len()
    }
}

impl FromStr for TopicFilter {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicFilter::parse(s)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, level) in self.levels.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(level.as_str())?;
        }
        Ok(())
    }
}
