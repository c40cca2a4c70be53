use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SPLIT: usize = 3;
pub const QUERY: usize = 4;
pub const SEP: usize = 5;

pub const N_KEYS: usize = 16;
pub const N_VALUES: usize = 16;
pub const N_ENTITIES: usize = 8;
pub const N_DIGITS: usize = 16;
pub const N_FILLERS: usize = 64;

const SPECIALS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<split>", "<query>", "<sep>"];
const KEY_BASE: usize = SPECIALS.len();
const VALUE_BASE: usize = KEY_BASE + N_KEYS;
const ENTITY_BASE: usize = VALUE_BASE + N_VALUES;
const DIGIT_BASE: usize = ENTITY_BASE + N_ENTITIES;
const FILLER_BASE: usize = DIGIT_BASE + N_DIGITS;
/// Size of [`Vocabulary::standard`].
pub const STANDARD_LEN: usize = FILLER_BASE + N_FILLERS;

/// Symbol table. The reserved specials always occupy ids `0..6`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

fn range_index(tok: usize, base: usize, n: usize) -> Option<usize> {
    (base..base + n).contains(&tok).then(|| tok - base)
}

impl Vocabulary {
    /// Specials, then keys `k0..`, values `v0..`, entities `e0..`, digits `d0..`, fillers `f0..`.
    pub fn standard() -> Self {
        let mut names: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for (prefix, n) in [("k", N_KEYS), ("v", N_VALUES), ("e", N_ENTITIES), ("d", N_DIGITS), ("f", N_FILLERS)] {
            names.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        Self::from_names(names).expect("standard vocabulary is valid")
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if names.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Format(format!("vocabulary id {i} must be {s}")));
            }
        }
        let mut ids = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary symbol {n}")));
            }
        }
        Ok(Self { names, ids })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.name(t).unwrap_or("?")).collect::<Vec<_>>().join(" ")
    }

    pub fn key(i: usize) -> usize {
        assert!(i < N_KEYS);
        KEY_BASE + i
    }

    pub fn value(i: usize) -> usize {
        assert!(i < N_VALUES);
        VALUE_BASE + i
    }

    pub fn entity(i: usize) -> usize {
        assert!(i < N_ENTITIES);
        ENTITY_BASE + i
    }

    pub fn digit(i: usize) -> usize {
        assert!(i < N_DIGITS);
        DIGIT_BASE + i
    }

    pub fn filler(i: usize) -> usize {
        assert!(i < N_FILLERS);
        FILLER_BASE + i
    }

    pub fn key_index(tok: usize) -> Option<usize> {
        range_index(tok, KEY_BASE, N_KEYS)
    }

    pub fn value_index(tok: usize) -> Option<usize> {
        range_index(tok, VALUE_BASE, N_VALUES)
    }

    pub fn entity_index(tok: usize) -> Option<usize> {
        range_index(tok, ENTITY_BASE, N_ENTITIES)
    }

    pub fn digit_index(tok: usize) -> Option<usize> {
        range_index(tok, DIGIT_BASE, N_DIGITS)
    }

    pub fn is_filler(tok: usize) -> bool {
        range_index(tok, FILLER_BASE, N_FILLERS).is_some()
    }
}
