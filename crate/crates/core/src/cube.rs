//! Points, sets, projections, combinatorial lines and disjoint products over `[3]^n`.
//!
//! Words are stored with coordinate 0 as the most significant base-3 digit
//! (the spec-facing "coordinate 1"). Sets over `{0,1}^n` and `{0,2}^n` are stored
//! on their own `2^n` cubes; a `CubeSet` with such a side is the set `E`, and its
//! pullback `{x : pi(x) in E}` is what `measure` and `lines_in_set` see.

use crate::bitset::BitSet;
use crate::rational::{int, Rational};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Largest dimension for which dense sets are materialized.
pub const MAX_DIM: usize = 20;
/// Marker for a wildcard position in a [`LineTemplate`].
pub const WILDCARD: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CubeError {
    #[error("dimension {0} exceeds the dense limit {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("symbol {symbol} is not valid for a {side} set")]
    BadSymbol { symbol: u8, side: Side },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("expected a {expected} set, got {got}")]
    SideMismatch { expected: Side, got: Side },
    #[error("word has length {got}, expected {expected}")]
    WordLength { expected: usize, got: usize },
    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: u64, n: usize },
    #[error("a line template needs at least one wildcard")]
    NoWildcard,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Which cube a set lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Full,
    ZeroOne,
    ZeroTwo,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Full => "full",
            Side::ZeroOne => "zero-one",
            Side::ZeroTwo => "zero-two",
        })
    }
}

impl Side {
    #[inline]
    pub fn base(self) -> usize {
        match self {
            Side::Full => 3,
            _ => 2,
        }
    }

    pub fn symbols(self) -> &'static [u8] {
        match self {
            Side::Full => &[0, 1, 2],
            Side::ZeroOne => &[0, 1],
            Side::ZeroTwo => &[0, 2],
        }
    }

    /// Symbol to local digit.
    #[inline]
    pub fn local(self, sym: u8) -> Option<u8> {
        match (self, sym) {
            (Side::Full, 0..=2) => Some(sym),
            (Side::ZeroOne, 0 | 1) => Some(sym),
            (Side::ZeroTwo, 0) => Some(0),
            (Side::ZeroTwo, 2) => Some(1),
            _ => None,
        }
    }

    /// Local digit to symbol.
    #[inline]
    pub fn symbol(self, local: u8) -> u8 {
        match self {
            Side::ZeroTwo => local * 2,
            _ => local,
        }
    }

    /// Maps a `[3]` symbol onto this side: identity, `pi1` or `pi2`.
    #[inline]
    pub fn project(self, sym: u8) -> u8 {
        match self {
            Side::Full => sym,
            Side::ZeroOne => u8::from(sym == 1),
            Side::ZeroTwo => 2 * u8::from(sym == 2),
        }
    }
}

pub fn pow3(n: usize) -> u64 {
    3u64.pow(n as u32)
}

pub fn cube_size(n: usize, side: Side) -> usize {
    (side.base() as u64).pow(n as u32) as usize
}

/// Base-3 index of a word over `{0,1,2}`, coordinate 0 most significant.
pub fn point_index(digits: &[u8]) -> Result<u64, CubeError> {
    if digits.len() > MAX_DIM {
        return Err(CubeError::DimensionTooLarge(digits.len()));
    }
    digits.iter().try_fold(0u64, |acc, &d| {
        if d > 2 {
            Err(CubeError::BadSymbol {
                symbol: d,
                side: Side::Full,
            })
        } else {
            Ok(acc * 3 + d as u64)
        }
    })
}

/// Inverse of [`point_index`].
pub fn point_digits(index: u64, n: usize) -> Result<Vec<u8>, CubeError> {
    if n > MAX_DIM {
        return Err(CubeError::DimensionTooLarge(n));
    }
    if index >= pow3(n) {
        return Err(CubeError::IndexOutOfRange { index, n });
    }
    Ok(local_digits(index as usize, n, 3))
}

fn local_digits(mut index: usize, n: usize, base: usize) -> Vec<u8> {
    let mut out = vec![0u8; n];
    for slot in out.iter_mut().rev() {
        *slot = (index % base) as u8;
        index /= base;
    }
    out
}

pub fn pi1(x: &[u8]) -> Vec<u8> {
    x.iter().map(|&d| Side::ZeroOne.project(d)).collect()
}

pub fn pi2(x: &[u8]) -> Vec<u8> {
    x.iter().map(|&d| Side::ZeroTwo.project(d)).collect()
}

/// A point of `[3]^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    n: usize,
    index: u64,
}

impl Point {
    pub fn from_digits(digits: &[u8]) -> Result<Self, CubeError> {
        Ok(Point {
            n: digits.len(),
            index: point_index(digits)?,
        })
    }

    pub fn from_index(index: u64, n: usize) -> Result<Self, CubeError> {
        point_digits(index, n)?;
        Ok(Point { n, index })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn digits(&self) -> Vec<u8> {
        local_digits(self.index as usize, self.n, 3)
    }

    pub fn pi1(&self) -> Point {
        Point::from_digits(&pi1(&self.digits())).expect("projection stays in range")
    }

    pub fn pi2(&self) -> Point {
        Point::from_digits(&pi2(&self.digits())).expect("projection stays in range")
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.digits() {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// A subset of `[3]^n`, `{0,1}^n` or `{0,2}^n` as a dense bit vector.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CubeSet {
    n: usize,
    side: Side,
    bits: BitSet,
}

impl fmt::Debug for CubeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CubeSet({}, n={}, {{", self.side, self.n)?;
        for (i, p) in self.iter_points().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            for d in p {
                write!(f, "{d}")?;
            }
        }
        f.write_str("})")
    }
}

impl CubeSet {
    pub fn empty(n: usize, side: Side) -> Result<Self, CubeError> {
        if n > MAX_DIM {
            return Err(CubeError::DimensionTooLarge(n));
        }
        Ok(CubeSet {
            n,
            side,
            bits: BitSet::new(cube_size(n, side)),
        })
    }

    pub fn full(n: usize, side: Side) -> Result<Self, CubeError> {
        if n > MAX_DIM {
            return Err(CubeError::DimensionTooLarge(n));
        }
        Ok(CubeSet {
            n,
            side,
            bits: BitSet::full(cube_size(n, side)),
        })
    }

    pub(crate) fn from_bits(n: usize, side: Side, bits: BitSet) -> Self {
        debug_assert_eq!(bits.len(), cube_size(n, side));
        CubeSet { n, side, bits }
    }

    /// Builds a set from a membership predicate over symbol words.
    pub fn from_fn(
        n: usize,
        side: Side,
        mut pred: impl FnMut(&[u8]) -> bool,
    ) -> Result<Self, CubeError> {
        let mut s = CubeSet::empty(n, side)?;
        let mut word = vec![0u8; n];
        for idx in 0..s.size() {
            s.symbols_into(idx, &mut word);
            if pred(&word) {
                s.bits.insert(idx);
            }
        }
        Ok(s)
    }

    pub fn from_points<W: AsRef<[u8]>>(
        n: usize,
        side: Side,
        points: impl IntoIterator<Item = W>,
    ) -> Result<Self, CubeError> {
        let mut s = CubeSet::empty(n, side)?;
        for p in points {
            s.insert(p.as_ref())?;
        }
        Ok(s)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn bits(&self) -> &BitSet {
        &self.bits
    }

    /// Number of cells of the underlying cube.
    #[inline]
    pub fn size(&self) -> usize {
        self.bits.len()
    }

    /// Number of members.
    pub fn len(&self) -> u64 {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.none()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.size() as u64
    }

    /// Local index of a symbol word, or an error for wrong length/symbols.
    pub fn index_of(&self, word: &[u8]) -> Result<usize, CubeError> {
        if word.len() != self.n {
            return Err(CubeError::WordLength {
                expected: self.n,
                got: word.len(),
            });
        }
        let base = self.side.base();
        word.iter().try_fold(0usize, |acc, &s| {
            self.side
                .local(s)
                .map(|d| acc * base + d as usize)
                .ok_or(CubeError::BadSymbol {
                    symbol: s,
                    side: self.side,
                })
        })
    }

    pub fn symbols_of(&self, index: usize) -> Vec<u8> {
        let mut w = vec![0u8; self.n];
        self.symbols_into(index, &mut w);
        w
    }

    pub(crate) fn symbols_into(&self, mut index: usize, out: &mut [u8]) {
        let base = self.side.base();
        for slot in out.iter_mut().rev() {
            *slot = self.side.symbol((index % base) as u8);
            index /= base;
        }
    }

    /// Membership of a word written in this set's own alphabet.
    pub fn contains(&self, word: &[u8]) -> bool {
        self.index_of(word).map(|i| self.bits.get(i)).unwrap_or(false)
    }

    #[inline]
    pub fn contains_index(&self, index: usize) -> bool {
        self.bits.get(index)
    }

    /// Membership of a point of `[3]^n` in the pullback of this set.
    pub fn contains_point(&self, x: &[u8]) -> bool {
        if x.len() != self.n {
            return false;
        }
        let base = self.side.base();
        let mut idx = 0usize;
        for &s in x {
            if s > 2 {
                return false;
            }
            let local = self.side.local(self.side.project(s)).expect("projection is valid");
            idx = idx * base + local as usize;
        }
        self.bits.get(idx)
    }

    pub fn insert(&mut self, word: &[u8]) -> Result<(), CubeError> {
        let i = self.index_of(word)?;
        self.bits.insert(i);
        Ok(())
    }

    pub fn remove(&mut self, word: &[u8]) -> Result<(), CubeError> {
        let i = self.index_of(word)?;
        self.bits.set(i, false);
        Ok(())
    }

    pub fn set_index(&mut self, index: usize, v: bool) {
        self.bits.set(index, v);
    }

    pub fn iter_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn iter_points(&self) -> impl Iterator<Item = Vec<u8>> + '_ {
        self.bits.iter_ones().map(|i| self.symbols_of(i))
    }

    fn check_compatible(&self, other: &CubeSet) -> Result<(), CubeError> {
        if self.n != other.n {
            return Err(CubeError::DimensionMismatch(self.n, other.n));
        }
        if self.side != other.side {
            return Err(CubeError::SideMismatch {
                expected: self.side,
                got: other.side,
            });
        }
        Ok(())
    }

    pub fn intersection(&self, other: &CubeSet) -> Result<CubeSet, CubeError> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.bits.intersect_with(&other.bits);
        Ok(out)
    }

    pub fn union(&self, other: &CubeSet) -> Result<CubeSet, CubeError> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.bits.union_with(&other.bits);
        Ok(out)
    }

    pub fn complement(&self) -> CubeSet {
        CubeSet {
            n: self.n,
            side: self.side,
            bits: self.bits.complement(),
        }
    }

    pub fn is_subset(&self, other: &CubeSet) -> bool {
        self.n == other.n && self.side == other.side && self.bits.is_subset(&other.bits)
    }

    /// `{x in [3]^n : pi(x) in self}` as a full-side set.
    pub fn pullback(&self) -> CubeSet {
        if self.side == Side::Full {
            return self.clone();
        }
        let mut out = CubeSet::empty(self.n, Side::Full).expect("same dimension");
        let mut word = vec![0u8; self.n];
        for idx in 0..out.size() {
            out.symbols_into(idx, &mut word);
            if self.contains_point(&word) {
                out.bits.insert(idx);
            }
        }
        out
    }

    pub fn fingerprint(&self) -> u64 {
        crate::rng::derive_seed(
            crate::rng::fingerprint(self.bits.words()),
            &[self.n as u64, self.side.base() as u64, self.side.symbol(1) as u64],
        )
    }

    pub fn to_file(&self) -> SetFile {
        SetFile {
            n: self.n,
            side: self.side,
            points: self
                .iter_points()
                .map(|p| p.iter().map(|d| char::from(b'0' + d)).collect())
                .collect(),
        }
    }

    pub fn from_file(f: &SetFile) -> Result<CubeSet, CubeError> {
        let mut s = CubeSet::empty(f.n, f.side)?;
        for p in &f.points {
            let word = p
                .chars()
                .map(|c| {
                    c.to_digit(10)
                        .filter(|&d| d <= 2)
                        .map(|d| d as u8)
                        .ok_or_else(|| CubeError::Parse(format!("bad point {p:?}")))
                })
                .collect::<Result<Vec<u8>, _>>()?;
            s.insert(&word)?;
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("set files serialize")
    }

    pub fn from_json(s: &str) -> Result<CubeSet, CubeError> {
        let f: SetFile = serde_json::from_str(s).map_err(|e| CubeError::Parse(e.to_string()))?;
        CubeSet::from_file(&f)
    }
}

impl Serialize for CubeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

/// On-disk set format: points are symbol strings, coordinate 1 first, sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetFile {
    pub n: usize,
    pub side: Side,
    pub points: Vec<String>,
}

/// A word over `{0,1,2,*}^n` with at least one wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LineTemplate {
    word: Vec<u8>,
}

impl LineTemplate {
    pub fn new(word: Vec<u8>) -> Result<Self, CubeError> {
        if let Some(&s) = word.iter().find(|&&s| s > WILDCARD) {
            return Err(CubeError::BadSymbol {
                symbol: s,
                side: Side::Full,
            });
        }
        if !word.contains(&WILDCARD) {
            return Err(CubeError::NoWildcard);
        }
        Ok(LineTemplate { word })
    }

    pub fn n(&self) -> usize {
        self.word.len()
    }

    pub fn word(&self) -> &[u8] {
        &self.word
    }

    pub fn wildcard_count(&self) -> usize {
        self.word.iter().filter(|&&s| s == WILDCARD).count()
    }

    /// The point obtained by substituting `sym` for every wildcard.
    pub fn instantiate(&self, sym: u8) -> Vec<u8> {
        self.word
            .iter()
            .map(|&s| if s == WILDCARD { sym } else { s })
            .collect()
    }

    /// The three points `(x, y, z)` of the line.
    pub fn points(&self) -> [Vec<u8>; 3] {
        [self.instantiate(0), self.instantiate(1), self.instantiate(2)]
    }

    pub fn indices(&self) -> [u64; 3] {
        let p = self.points();
        [0, 1, 2].map(|i| point_index(&p[i]).expect("template symbols are valid"))
    }
}

impl fmt::Display for LineTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.word {
            if s == WILDCARD {
                f.write_str("*")?;
            } else {
                write!(f, "{s}")?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for LineTemplate {
    type Err = CubeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let word = s
            .chars()
            .map(|c| match c {
                '*' => Ok(WILDCARD),
                '0'..='2' => Ok(c as u8 - b'0'),
                _ => Err(CubeError::Parse(format!("bad template {s:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        LineTemplate::new(word)
    }
}

/// Iterator over every line template of `[3]^n`, in base-4 counting order.
pub struct LineIter {
    word: Vec<u8>,
    done: bool,
}

impl Iterator for LineIter {
    type Item = LineTemplate;

    fn next(&mut self) -> Option<LineTemplate> {
        loop {
            if self.done {
                return None;
            }
            let current = self.word.clone();
            // odometer over {0,1,2,*}
            let mut carry = true;
            for slot in self.word.iter_mut().rev() {
                if *slot == WILDCARD {
                    *slot = 0;
                } else {
                    *slot += 1;
                    carry = false;
                    break;
                }
            }
            if carry {
                self.done = true;
            }
            if current.contains(&WILDCARD) {
                return Some(LineTemplate { word: current });
            }
        }
    }
}

pub fn enumerate_lines(n: usize) -> LineIter {
    LineIter {
        word: vec![0; n],
        done: n == 0,
    }
}

pub fn line_count(n: usize) -> u64 {
    4u64.pow(n as u32) - 3u64.pow(n as u32)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineCount {
    pub count: u64,
    pub witnesses: Vec<String>,
}

/// Visits every template whose three points lie in `bits` (a full-side cube of
/// dimension `n`). The callback gets the template word and may stop the search.
fn visit_lines(
    bits: &BitSet,
    n: usize,
    mut f: impl FnMut(&[u8]) -> std::ops::ControlFlow<()>,
) {
    fn rec(
        pos: usize,
        n: usize,
        base: usize,
        wild: usize,
        word: &mut [u8],
        bits: &BitSet,
        weights: &[usize],
        f: &mut dyn FnMut(&[u8]) -> std::ops::ControlFlow<()>,
    ) -> std::ops::ControlFlow<()> {
        if pos == n {
            if wild > 0 && bits.get(base) && bits.get(base + wild) && bits.get(base + 2 * wild) {
                return f(word);
            }
            return std::ops::ControlFlow::Continue(());
        }
        let w = weights[pos];
        for s in 0..3u8 {
            word[pos] = s;
            rec(pos + 1, n, base + s as usize * w, wild, word, bits, weights, f)?;
        }
        word[pos] = WILDCARD;
        rec(pos + 1, n, base, wild + w, word, bits, weights, f)
    }
    let weights: Vec<usize> = (0..n).map(|p| pow3(n - 1 - p) as usize).collect();
    let mut word = vec![0u8; n];
    let _ = rec(0, n, 0, 0, &mut word, bits, &weights, &mut f);
}

fn full_bits(s: &CubeSet) -> std::borrow::Cow<'_, BitSet> {
    if s.side == Side::Full {
        std::borrow::Cow::Borrowed(&s.bits)
    } else {
        std::borrow::Cow::Owned(s.pullback().bits)
    }
}

/// Counts the templates whose three points all lie in (the pullback of) `s`.
pub fn lines_in_set(s: &CubeSet, max_witnesses: usize) -> LineCount {
    let bits = full_bits(s);
    let mut count = 0u64;
    let mut witnesses = Vec::new();
    visit_lines(&bits, s.n, |w| {
        count += 1;
        if witnesses.len() < max_witnesses {
            witnesses.push(LineTemplate { word: w.to_vec() }.to_string());
        }
        std::ops::ControlFlow::Continue(())
    });
    LineCount { count, witnesses }
}

/// First line of `s` in enumeration order, if any.
pub fn find_line(s: &CubeSet) -> Option<LineTemplate> {
    let bits = full_bits(s);
    let mut found = None;
    visit_lines(&bits, s.n, |w| {
        found = Some(LineTemplate { word: w.to_vec() });
        std::ops::ControlFlow::Break(())
    });
    found
}

pub fn is_line_free(s: &CubeSet) -> bool {
    find_line(s).is_none()
}

/// `E1 ⊠ E2 = {x : pi1(x) in E1 and pi2(x) in E2}`.
pub fn disjoint_product(e1: &CubeSet, e2: &CubeSet) -> Result<CubeSet, CubeError> {
    if e1.side != Side::ZeroOne {
        return Err(CubeError::SideMismatch {
            expected: Side::ZeroOne,
            got: e1.side,
        });
    }
    if e2.side != Side::ZeroTwo {
        return Err(CubeError::SideMismatch {
            expected: Side::ZeroTwo,
            got: e2.side,
        });
    }
    if e1.n != e2.n {
        return Err(CubeError::DimensionMismatch(e1.n, e2.n));
    }
    let n = e1.n;
    let mut out = CubeSet::empty(n, Side::Full)?;
    let mut digits = vec![0u8; n];
    let (mut i1, mut i2) = (0usize, 0usize);
    for idx in 0..out.size() {
        if e1.bits.get(i1) && e2.bits.get(i2) {
            out.bits.insert(idx);
        }
        // advance the base-3 odometer, keeping both binary projections in step
        for pos in (0..n).rev() {
            let w = 1usize << (n - 1 - pos);
            match digits[pos] {
                0 => {
                    digits[pos] = 1;
                    i1 += w;
                    break;
                }
                1 => {
                    digits[pos] = 2;
                    i1 -= w;
                    i2 += w;
                    break;
                }
                _ => {
                    digits[pos] = 0;
                    i2 -= w;
                }
            }
        }
    }
    Ok(out)
}

/// Per-coordinate distribution on `[3]`: probabilities of 0, 1, 2.
pub type CoordDist = [Rational; 3];

pub fn uniform_coord() -> CoordDist {
    let third = crate::rational::rat(1, 3);
    [third.clone(), third.clone(), third]
}

/// Exact `sum_{x in S} prod_i d_i(x_i)`, where side sets are measured by their pullback.
pub fn measure(s: &CubeSet, dists: &[CoordDist]) -> Result<Rational, CubeError> {
    if dists.len() != s.n {
        return Err(CubeError::DimensionMismatch(s.n, dists.len()));
    }
    // local-digit probabilities per coordinate
    let local: Vec<Vec<Rational>> = dists
        .iter()
        .map(|d| match s.side {
            Side::Full => d.to_vec(),
            Side::ZeroOne => vec![&d[0] + &d[2], d[1].clone()],
            Side::ZeroTwo => vec![&d[0] + &d[1], d[2].clone()],
        })
        .collect();
    let base = s.side.base();
    let mut total = Rational::zero();
    for idx in s.bits.iter_ones() {
        let mut p = Rational::one();
        let mut rest = idx;
        for pos in (0..s.n).rev() {
            p *= &local[pos][rest % base];
            rest /= base;
        }
        total += p;
    }
    Ok(total)
}

/// Uniform measure on `[3]^n` of `s` (or of its pullback).
pub fn uniform_measure(s: &CubeSet) -> Rational {
    let denom = BigInt::from(pow3(s.n));
    match s.side {
        Side::Full => Rational::new(BigInt::from(s.len()), denom),
        _ => {
            // a side word with h ones pulls back to 2^(n-h) points
            let mut num = BigInt::zero();
            for idx in s.bits.iter_ones() {
                let h = idx.count_ones() as usize;
                num += BigInt::one() << (s.n - h);
            }
            Rational::new(num, denom)
        }
    }
}

/// Uniform measure written as a rational `count / 3^n`, for quick reporting.
pub fn density(s: &CubeSet) -> f64 {
    crate::rational::to_f64(&uniform_measure(s))
}

pub fn full_measure() -> Rational {
    int(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    #[test]
    fn point_index_examples() {
        assert_eq!(point_index(&[0, 0]).unwrap(), 0);
        assert_eq!(point_index(&[0, 1, 2]).unwrap(), 5);
        assert!(point_index(&[0, 3]).is_err());
        for i in 0..81 {
            assert_eq!(point_index(&point_digits(i, 4).unwrap()).unwrap(), i);
        }
        assert!(point_digits(81, 4).is_err());
    }

    #[test]
    fn projections() {
        assert_eq!(pi1(&[0, 1, 2]), vec![0, 1, 0]);
        assert_eq!(pi2(&[0, 1, 2]), vec![0, 0, 2]);
        assert_eq!(pi1(&[0, 0, 0]), vec![0, 0, 0]);
        let p = Point::from_digits(&[2, 1, 0]).unwrap();
        assert_eq!(p.pi1().digits(), vec![0, 1, 0]);
        assert_eq!(p.pi2().to_string(), "200");
    }

    #[test]
    fn template_counts() {
        assert_eq!(enumerate_lines(1).map(|t| t.to_string()).collect::<Vec<_>>(), vec!["*"]);
        assert_eq!(enumerate_lines(2).count(), 7);
        assert_eq!(enumerate_lines(4).count(), 175);
        assert_eq!(enumerate_lines(0).count(), 0);
    }

    #[test]
    fn lines_in_small_sets() {
        let full1 = CubeSet::full(1, Side::Full).unwrap();
        assert_eq!(lines_in_set(&full1, 10).count, 1);
        let s = CubeSet::from_points(1, Side::Full, [[0u8], [1]]).unwrap();
        assert_eq!(lines_in_set(&s, 10).count, 0);
        let full2 = CubeSet::full(2, Side::Full).unwrap();
        assert_eq!(lines_in_set(&full2, 10).count, 7);
        assert!(find_line(&full2).is_some());
    }

    #[test]
    fn disjoint_product_examples() {
        let e1 = CubeSet::full(1, Side::ZeroOne).unwrap();
        let e2 = CubeSet::from_points(1, Side::ZeroTwo, [[0u8]]).unwrap();
        let p = disjoint_product(&e1, &e2).unwrap();
        assert_eq!(p.iter_points().collect::<Vec<_>>(), vec![vec![0], vec![1]]);

        let e1 = CubeSet::from_fn(2, Side::ZeroOne, |w| w[0] == 1).unwrap();
        let e2 = CubeSet::from_fn(2, Side::ZeroTwo, |w| w[1] == 2).unwrap();
        let p = disjoint_product(&e1, &e2).unwrap();
        assert_eq!(p.iter_points().collect::<Vec<_>>(), vec![vec![1, 2]]);
        assert_eq!(uniform_measure(&p), rat(1, 9));

        let e1 = CubeSet::full(3, Side::ZeroOne).unwrap();
        let e2 = CubeSet::full(3, Side::ZeroTwo).unwrap();
        assert!(disjoint_product(&e1, &e2).unwrap().is_full());
        assert!(disjoint_product(&e2, &e1).is_err());
        let e2 = CubeSet::full(2, Side::ZeroTwo).unwrap();
        assert!(matches!(
            disjoint_product(&e1, &e2),
            Err(CubeError::DimensionMismatch(3, 2))
        ));
    }

    #[test]
    fn measure_examples() {
        let full = CubeSet::full(3, Side::Full).unwrap();
        let u = vec![uniform_coord(); 3];
        assert_eq!(measure(&full, &u).unwrap(), rat(1, 1));
        let s = CubeSet::from_points(1, Side::Full, [[0u8], [1]]).unwrap();
        assert_eq!(measure(&s, &[uniform_coord()]).unwrap(), rat(2, 3));
        // pullback measure of {w : w_0 = 1} on {0,1}^2 is 1/3
        let e1 = CubeSet::from_fn(2, Side::ZeroOne, |w| w[0] == 1).unwrap();
        assert_eq!(measure(&e1, &[uniform_coord(), uniform_coord()]).unwrap(), rat(1, 3));
        assert_eq!(uniform_measure(&e1), rat(1, 3));
        assert_eq!(uniform_measure(&e1), uniform_measure(&e1.pullback()));
    }

    #[test]
    fn set_file_round_trip() {
        let s = CubeSet::from_points(2, Side::ZeroTwo, [[0u8, 2], [2, 2]]).unwrap();
        let js = s.to_json();
        assert_eq!(js, r#"{"n":2,"side":"zero-two","points":["02","22"]}"#);
        assert_eq!(CubeSet::from_json(&js).unwrap(), s);
        assert!(CubeSet::from_json(r#"{"n":1,"side":"zero-one","points":["2"]}"#).is_err());
    }
}
