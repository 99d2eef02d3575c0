//! Alphabets, index-encoded sequences and the exact Levenshtein oracle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ndnet::{Scalar, Tensor};
use crate::{Error, Result};

/// Symbol used for the padding slot of [`Alphabet::dna`].
pub const PAD_CHAR: char = '_';

/// Ordered set of symbols; the last symbol is the reserved padding symbol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
    pad_index: usize,
}

impl Alphabet {
    /// Builds an alphabet from its content symbols; `pad` is appended as the last symbol.
    pub fn new(content: &str, pad: char) -> Result<Self> {
        let mut symbols: Vec<char> = content.chars().collect();
        symbols.push(pad);
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::invalid(format!("duplicate alphabet symbol {c:?}")));
            }
        }
        if symbols.len() < 2 {
            return Err(Error::invalid("alphabet needs at least one symbol besides padding"));
        }
        if symbols.len() > usize::from(u8::MAX) {
            return Err(Error::invalid("alphabet too large"));
        }
        let pad_index = symbols.len() - 1;
        Ok(Self { symbols, pad_index })
    }

    /// `A, T, G, C, N` plus padding.
    pub fn dna() -> Self {
        Self::new("ATGCN", PAD_CHAR).expect("static alphabet is valid")
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Number of non-padding symbols.
    pub fn content_size(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn pad_index(&self) -> u8 {
        self.pad_index as u8
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<u8> {
        self.symbols.iter().position(|&s| s == c).map(|i| i as u8)
    }

    /// Parses text over the content symbols. Padding characters are rejected.
    pub fn encode(&self, text: &str) -> Result<Sequence> {
        let codes = text
            .chars()
            .enumerate()
            .map(|(position, symbol)| match self.index_of(symbol) {
                Some(i) if usize::from(i) != self.pad_index => Ok(i),
                _ => Err(Error::UnknownSymbol { symbol, position }),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Sequence::from_codes(codes))
    }

    /// Renders the content symbols (padding is not printed).
    pub fn decode(&self, s: &Sequence) -> String {
        s.content().iter().map(|&c| self.symbols[usize::from(c)]).collect()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::dna()
    }
}

/// Index-encoded sequence. Codes past `length` are padding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Sequence {
    codes: Vec<u8>,
    length: usize,
}

impl Sequence {
    /// Unpadded sequence made of content codes.
    pub fn from_codes(codes: Vec<u8>) -> Self {
        let length = codes.len();
        Self { codes, length }
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Number of non-padding codes.
    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    /// The true symbols, padding stripped.
    pub fn content(&self) -> &[u8] {
        &self.codes[..self.length]
    }

    pub fn padded_len(&self) -> usize {
        self.codes.len()
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Without an alphabet at hand, print the codes.
        for c in self.content() {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Levenshtein distance between the content of two sequences.
pub fn levenshtein(a: &Sequence, b: &Sequence) -> usize {
    levenshtein_codes(a.content(), b.content())
}

/// Two-row Wagner–Fischer over raw code slices; memory is `O(min(|a|, |b|))`.
pub fn levenshtein_codes(a: &[u8], b: &[u8]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, &x) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            let del = prev[j + 1] + 1;
            let ins = cur[j] + 1;
            cur[j + 1] = sub.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Banded Levenshtein. Returns `None` when the distance exceeds `band`.
pub fn levenshtein_banded(a: &Sequence, b: &Sequence, band: usize) -> Option<usize> {
    levenshtein_banded_codes(a.content(), b.content(), band)
}

pub fn levenshtein_banded_codes(a: &[u8], b: &[u8], band: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > band {
        return None;
    }
    if n == 0 || m == 0 {
        return Some(n.max(m));
    }
    // Cells outside |i - j| <= band hold a sentinel larger than any in-band value.
    let inf = band + 1;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    for (j, p) in prev.iter_mut().enumerate().take(band.min(m) + 1) {
        *p = j;
    }
    for i in 1..=n {
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(m);
        cur.fill(inf);
        if i <= band {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = prev[j] + 1;
            let ins = cur[j - 1] + 1;
            let v = sub.min(del).min(ins).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > band {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[m];
    (d <= band).then_some(d)
}

/// Suffix-pads `s` with the padding symbol up to `target_len` codes.
pub fn pad(s: &Sequence, alphabet: &Alphabet, target_len: usize) -> Result<Sequence> {
    if s.len() > target_len {
        return Err(Error::TooLong {
            len: s.len(),
            target: target_len,
        });
    }
    let mut codes = s.content().to_vec();
    codes.resize(target_len, alphabet.pad_index());
    Ok(Sequence {
        codes,
        length: s.len(),
    })
}

/// One-hot encoding of a padded sequence, shape `(alphabet_size, padded_len)`.
pub fn one_hot<T: Scalar>(s: &Sequence, alphabet: &Alphabet) -> Result<Tensor<T>> {
    let (a, l) = (alphabet.size(), s.padded_len());
    let mut t = Tensor::zeros(&[a, l]);
    write_one_hot(s.codes(), a, t.data_mut())?;
    Ok(t)
}

/// Writes one-hot columns for `codes` into an `(alphabet_size, codes.len())` row-major slice.
pub(crate) fn write_one_hot<T: Scalar>(codes: &[u8], alphabet_size: usize, out: &mut [T]) -> Result<()> {
    let l = codes.len();
    debug_assert_eq!(out.len(), alphabet_size * l);
    for (j, &c) in codes.iter().enumerate() {
        let c = usize::from(c);
        if c >= alphabet_size {
            return Err(Error::invalid(format!(
                "code {c} at position {j} outside alphabet of size {alphabet_size}"
            )));
        }
        out[c * l + j] = T::one();
    }
    Ok(())
}

/// Length of the homopolymer run containing position `i` (0 if out of range).
pub fn homopolymer_run_at(codes: &[u8], i: usize) -> usize {
    if i >= codes.len() {
        return 0;
    }
    let c = codes[i];
    let left = codes[..i].iter().rev().take_while(|&&x| x == c).count();
    let right = codes[i..].iter().take_while(|&&x| x == c).count();
    left + right
}

/// Longest homopolymer run in `codes`.
pub fn longest_homopolymer(codes: &[u8]) -> usize {
    codes
        .chunk_by(|a, b| a == b)
        .map(<[u8]>::len)
        .max()
        .unwrap_or(0)
}
