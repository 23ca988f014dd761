//! Reference oracles used by the acceptance suite. Each one is written the
//! slow, obvious way and shares no code with the implementations it checks.

/// Every string over an alphabet of `k` symbols with length `0..=max_len`,
/// numbered by length first and then as a base-`k` number with the first
/// symbol most significant.
#[derive(Debug, Clone)]
pub struct StringSpace {
    pub k: usize,
    pub max_len: usize,
    /// `offsets[l]` is the id of the first string of length `l`.
    offsets: Vec<usize>,
    powers: Vec<usize>,
}

impl StringSpace {
    pub fn new(k: usize, max_len: usize) -> Self {
        let powers: Vec<usize> = (0..=max_len).map(|l| k.pow(l as u32)).collect();
        let mut offsets = vec![0];
        for l in 0..max_len {
            offsets.push(offsets[l] + powers[l]);
        }
        Self { k, max_len, offsets, powers }
    }

    pub fn len(&self) -> usize {
        self.offsets[self.max_len] + self.powers[self.max_len]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length_of(&self, id: usize) -> usize {
        (0..=self.max_len).rev().find(|&l| id >= self.offsets[l]).expect("id in range")
    }

    /// Symbols of string `id`, as indices into the alphabet.
    pub fn symbols(&self, id: usize) -> Vec<usize> {
        let l = self.length_of(id);
        let mut v = id - self.offsets[l];
        let mut out = vec![0; l];
        for slot in out.iter_mut().rev() {
            *slot = v % self.k;
            v /= self.k;
        }
        out
    }

    pub fn render(&self, id: usize, alphabet: &[char]) -> String {
        self.symbols(id).into_iter().map(|s| alphabet[s]).collect()
    }

    fn head(&self, id: usize) -> usize {
        let l = self.length_of(id);
        (id - self.offsets[l]) / self.powers[l - 1]
    }

    /// The string without its first symbol.
    fn tail(&self, id: usize) -> usize {
        let l = self.length_of(id);
        let v = (id - self.offsets[l]) % self.powers[l - 1];
        self.offsets[l - 1] + v
    }
}

/// Edit distance of every pair in a [`StringSpace`], filled in by the
/// head/tail recursion
///
/// ```text
/// lev(a, b) = |a|                              if |b| = 0
///           = |b|                              if |a| = 0
///           = lev(tail a, tail b)              if a[0] = b[0]
///           = 1 + min(lev(tail a, b), lev(a, tail b), lev(tail a, tail b))
/// ```
///
/// evaluated in order of increasing total length so every right-hand side
/// is already in the table. With `substitution = false` the last branch
/// drops `lev(tail a, tail b)`, which gives the insert/delete-only distance.
pub struct LevTable {
    pub space: StringSpace,
    n: usize,
    table: Vec<u8>,
}

impl LevTable {
    pub fn build(space: StringSpace, substitution: bool) -> Self {
        let n = space.len();
        let lengths: Vec<usize> = (0..n).map(|i| space.length_of(i)).collect();
        let heads: Vec<usize> = (0..n).map(|i| if lengths[i] == 0 { usize::MAX } else { space.head(i) }).collect();
        let tails: Vec<usize> = (0..n).map(|i| if lengths[i] == 0 { usize::MAX } else { space.tail(i) }).collect();
        let mut table = vec![u8::MAX; n * n];
        // Ids are ordered by length, so tails always come first.
        for a in 0..n {
            for b in 0..n {
                let v = if lengths[b] == 0 {
                    lengths[a]
                } else if lengths[a] == 0 {
                    lengths[b]
                } else if heads[a] == heads[b] {
                    table[tails[a] * n + tails[b]] as usize
                } else {
                    let del = table[tails[a] * n + b] as usize;
                    let ins = table[a * n + tails[b]] as usize;
                    let mut best = del.min(ins);
                    if substitution {
                        best = best.min(table[tails[a] * n + tails[b]] as usize);
                    }
                    1 + best
                };
                table[a * n + b] = v as u8;
            }
        }
        debug_assert!(table.iter().all(|&v| v != u8::MAX));
        Self { space, n, table }
    }

    pub fn get(&self, a: usize, b: usize) -> usize {
        self.table[a * self.n + b] as usize
    }
}

/// The same recursion without memoization, for spot checks on short input.
pub fn lev_recursive(a: &[char], b: &[char]) -> usize {
    if b.is_empty() {
        return a.len();
    }
    if a.is_empty() {
        return b.len();
    }
    if a[0] == b[0] {
        return lev_recursive(&a[1..], &b[1..]);
    }
    1 + lev_recursive(&a[1..], b).min(lev_recursive(a, &b[1..])).min(lev_recursive(&a[1..], &b[1..]))
}

/// Lowercase words with every non-alphanumeric character as a separator.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

/// Size of the multiset intersection, by pairing each reference n-gram with
/// a not yet used equal n-gram on the other side.
pub fn matched_ngrams(reference: &[Vec<String>], generated: &[Vec<String>]) -> usize {
    let mut used = vec![false; generated.len()];
    let mut hits = 0;
    for r in reference {
        if let Some(i) = (0..generated.len()).find(|&i| !used[i] && &generated[i] == r) {
            used[i] = true;
            hits += 1;
        }
    }
    hits
}

/// Longest common subsequence by trying every subset of the shorter side,
/// largest first. Only for short inputs.
pub fn lcs_brute<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute force LCS is exponential");
    let is_subsequence = |picked: &[&T]| {
        let mut it = long.iter();
        picked.iter().all(|p| it.any(|x| x == *p))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let picked: Vec<&T> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
        if is_subsequence(&picked) {
            best = size;
        }
    }
    best
}

/// `(recall, precision, f)` from raw counts, zero when nothing overlaps or
/// either side is empty.
pub fn prf(overlap: usize, reference_len: usize, generated_len: usize) -> (f64, f64, f64) {
    if overlap == 0 || reference_len == 0 || generated_len == 0 {
        return (0.0, 0.0, 0.0);
    }
    let r = overlap as f64 / reference_len as f64;
    let p = overlap as f64 / generated_len as f64;
    (r, p, 2.0 * overlap as f64 / (reference_len + generated_len) as f64)
}

/// True when `text` has a `{name}` slot made of letters, underscores or
/// spaces.
pub fn has_unresolved_slot(text: &str) -> bool {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c != '{' {
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (chars[j].is_ascii_alphabetic() || chars[j] == '_' || chars[j] == ' ') {
            j += 1;
        }
        if j > i + 1 && j < chars.len() && chars[j] == '}' {
            return true;
        }
    }
    false
}
