use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DIMENSION: usize = 4096;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // ext B..
}

/// Lowercased tokens: runs of letters/digits, with CJK runs split into
/// overlapping character bigrams (a lone CJK character is its own token).
pub fn tokenize(text: &str) -> Vec<String> {
    #[derive(PartialEq, Clone, Copy)]
    enum Run {
        None,
        Word,
        Cjk,
    }
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut cjk: Vec<char> = Vec::new();
    let mut run = Run::None;

    fn flush_cjk(cjk: &mut Vec<char>, tokens: &mut Vec<String>) {
        match cjk.len() {
            0 => {}
            1 => tokens.push(cjk[0].to_string()),
            _ => tokens.extend(cjk.windows(2).map(|w| w.iter().collect::<String>())),
        }
        cjk.clear();
    }

    for c in text.chars() {
        let kind = if is_cjk(c) {
            Run::Cjk
        } else if c.is_alphanumeric() {
            Run::Word
        } else {
            Run::None
        };
        if kind != run {
            if run == Run::Word && !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if run == Run::Cjk {
                flush_cjk(&mut cjk, &mut tokens);
            }
            run = kind;
        }
        match kind {
            Run::Word => word.extend(c.to_lowercase()),
            Run::Cjk => cjk.push(c),
            Run::None => {}
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    flush_cjk(&mut cjk, &mut tokens);
    tokens
}

/// FNV-1a 64 over the token's UTF-8 bytes, reduced mod `dimension`.
pub fn bucket(token: &str, dimension: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % dimension as u64) as usize
}

/// Document frequencies per hash bucket over an indexed corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdfTable {
    pub doc_count: usize,
    /// `(bucket, df)` pairs, bucket ascending.
    pub df: Vec<(usize, usize)>,
}

impl IdfTable {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>, dimension: usize) -> Self {
        let mut df: BTreeMap<usize, usize> = BTreeMap::new();
        let mut doc_count = 0;
        for doc in corpus {
            doc_count += 1;
            let mut seen: Vec<usize> = tokenize(doc).iter().map(|t| bucket(t, dimension)).collect();
            seen.sort_unstable();
            seen.dedup();
            for b in seen {
                *df.entry(b).or_default() += 1;
            }
        }
        IdfTable {
            doc_count,
            df: df.into_iter().collect(),
        }
    }

    fn df(&self, bucket: usize) -> usize {
        self.df
            .binary_search_by_key(&bucket, |(b, _)| *b)
            .map(|i| self.df[i].1)
            .unwrap_or(0)
    }

    /// `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, bucket: usize) -> f64 {
        ((1.0 + self.doc_count as f64) / (1.0 + self.df(bucket) as f64)).ln() + 1.0
    }
}

/// Hashed TF-IDF embedder. Deterministic and seed-free: the same corpus gives
/// bit-identical vectors on every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedTfIdf {
    pub dimension: usize,
    pub idf: IdfTable,
}

impl HashedTfIdf {
    /// Unfitted embedder: every idf is 1.
    pub fn new(dimension: usize) -> Self {
        HashedTfIdf {
            dimension,
            idf: IdfTable::default(),
        }
    }

    pub fn fit<'a>(dimension: usize, corpus: impl IntoIterator<Item = &'a str>) -> Self {
        HashedTfIdf {
            dimension,
            idf: IdfTable::fit(corpus, dimension),
        }
    }

    /// L2-normalized tf x idf vector; the zero vector when there are no tokens.
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut tf: BTreeMap<usize, u32> = BTreeMap::new();
        for token in tokenize(text) {
            *tf.entry(bucket(&token, self.dimension)).or_default() += 1;
        }
        let mut v = vec![0.0; self.dimension];
        let mut norm_sq = 0.0;
        for (&b, &count) in &tf {
            let w = count as f64 * self.idf.idf(b);
            v[b] = w;
            norm_sq += w * w;
        }
        if norm_sq > 0.0 {
            let norm = norm_sq.sqrt();
            for &b in tf.keys() {
                v[b] /= norm;
            }
        }
        v
    }

    pub fn fingerprint(&self) -> String {
        let mut h = FnvHasher::default();
        for (b, df) in &self.idf.df {
            h.write_u64(*b as u64);
            h.write_u64(*df as u64);
        }
        format!(
            "local-hashed-tfidf/d{}/n{}/{:016x}",
            self.dimension,
            self.idf.doc_count,
            h.finish()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_words_and_cjk_bigrams() {
        assert_eq!(
            tokenize("Roof-height  inspection #3"),
            vec!["roof", "height", "inspection", "3"]
        );
        assert_eq!(
            tokenize("チャック内ずれ"),
            vec!["チャ", "ャッ", "ック", "ク内", "内ず", "ずれ"]
        );
        assert_eq!(tokenize("ロボ arm 把"), vec!["ロボ", "arm", "把"]);
        assert!(tokenize("  -- ").is_empty());
    }

    #[test]
    fn fnv_matches_reference_vector() {
        // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c.
        assert_eq!(
            bucket("a", usize::MAX),
            (0xaf63dc4c8601ec8c_u64 % usize::MAX as u64) as usize
        );
        assert_eq!(
            bucket("a", DEFAULT_DIMENSION),
            (0xaf63dc4c8601ec8c_u64 % 4096) as usize
        );
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashedTfIdf::new(DEFAULT_DIMENSION);
        assert!(e.embed_one("").iter().all(|x| *x == 0.0));
    }

    #[test]
    fn identical_texts_identical_vectors() {
        let e = HashedTfIdf::fit(64, ["a b", "b c"]);
        assert_eq!(e.embed_one("x y"), e.embed_one("x y"));
        let v = e.embed_one("a b b");
        let norm: f64 = v.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn idf_formula() {
        let t = IdfTable::fit(["roof chuck", "roof press", "belt"], DEFAULT_DIMENSION);
        assert_eq!(t.doc_count, 3);
        let roof = bucket("roof", DEFAULT_DIMENSION);
        assert!((t.idf(roof) - ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
        let unseen = (0..DEFAULT_DIMENSION).find(|b| t.df(*b) == 0).unwrap();
        assert!((t.idf(unseen) - (4.0f64.ln() + 1.0)).abs() < 1e-15);
    }
}
