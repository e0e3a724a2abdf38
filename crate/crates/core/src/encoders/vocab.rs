use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const MAX_POST_TOKENS: usize = 64;

/// Lowercased word pieces; anything that is not alphanumeric separates.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Token→id mapping with `<pad>` = 0 and `<unk>` = 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            ids: HashMap::from([(PAD_TOKEN.to_string(), PAD_ID), (UNK_TOKEN.to_string(), UNK_ID)]),
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        }
    }
}

impl Vocab {
    /// Ids are assigned by descending frequency, ties by first occurrence.
    /// `max_size` bounds the total size including the two reserved ids.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for text in texts {
            for w in words(text) {
                let entry = counts.entry(w).or_insert((0, order));
                if entry.0 == 0 {
                    order += 1;
                }
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(String, usize, usize)> =
            counts.into_iter().map(|(w, (c, first))| (w, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let mut vocab = Self::default();
        let limit = max_size.unwrap_or(usize::MAX);
        for (w, _, _) in ranked {
            if vocab.len() >= limit {
                break;
            }
            if vocab.ids.contains_key(&w) {
                continue;
            }
            vocab.ids.insert(w.clone(), vocab.tokens.len());
            vocab.tokens.push(w);
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> TokenizedPost {
        let ids = words(text)
            .take(MAX_POST_TOKENS)
            .map(|w| self.id(&w).unwrap_or(UNK_ID))
            .collect();
        TokenizedPost {
            ids,
            text: text.to_string(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, usize> = self.ids.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: HashMap<String, usize> = serde_json::from_str(json)?;
        let mut tokens = vec![String::new(); map.len()];
        for (token, &id) in &map {
            let slot = tokens.get_mut(id).ok_or_else(|| {
                Error::invalid("vocab", format!("id {id} for {token:?} is not contiguous"))
            })?;
            if !slot.is_empty() {
                return Err(Error::invalid("vocab", format!("duplicate id {id}")));
            }
            *slot = token.clone();
        }
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::invalid("vocab", "ids 0 and 1 must be <pad> and <unk>"));
        }
        Ok(Self { ids: map, tokens })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Token ids of one post (at most [`MAX_POST_TOKENS`]) with the source text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPost {
    pub ids: Vec<usize>,
    pub text: String,
}

impl TokenizedPost {
    /// Ids padded with `PAD_ID` to [`MAX_POST_TOKENS`].
    pub fn padded(&self) -> Vec<usize> {
        let mut ids = self.ids.clone();
        ids.resize(MAX_POST_TOKENS, PAD_ID);
        ids
    }

    pub fn is_blank(&self) -> bool {
        self.ids.is_empty()
    }
}
