//! Byte-pair-merge subword tokenizer shared by every language task.
//!
//! Base symbols are the corpus characters plus an end-of-word marker; the
//! learner repeatedly merges the most frequent adjacent symbol pair (ties
//! broken lexicographically) until the learned vocabulary reaches its
//! target or no pair repeats. Encoding applies the merges in rank order
//! per whitespace-delimited word, so the same text always produces the
//! same ids. Whitespace is normalized to single spaces by a decode.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{DataError, Result};

pub const PAD_ID: u32 = 0;
pub const TERM_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

const PAD_TOKEN: &str = "<pad>";
const TERM_TOKEN: &str = "<term>";
const UNK_TOKEN: &str = "<unk>";
const EOW: &str = "</w>";

/// Subword vocabulary with reserved ids: pad=0, termination=1, unknown=2,
/// then one command token per task, then learned symbols.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    n_commands: usize,
}

impl Vocab {
    /// Learns merges over `corpus` until `target_learned` non-reserved
    /// tokens exist (base symbols count toward the target) or no adjacent
    /// pair occurs twice.
    pub fn learn(corpus: &str, target_learned: usize, command_names: &[String]) -> Result<Vocab> {
        // Word histogram; each word is a symbol sequence ending in the marker.
        let mut words: Vec<(Vec<String>, usize)> = Vec::new();
        let mut word_index: HashMap<String, usize> = HashMap::new();
        for w in corpus.split_whitespace() {
            if let Some(&i) = word_index.get(w) {
                words[i].1 += 1;
            } else {
                let mut syms: Vec<String> = w.chars().map(|c| c.to_string()).collect();
                syms.push(EOW.to_string());
                word_index.insert(w.to_string(), words.len());
                words.push((syms, 1));
            }
        }
        if words.is_empty() {
            return Err(DataError::EmptyCorpus);
        }

        let mut base: Vec<String> = words
            .iter()
            .flat_map(|(syms, _)| syms.iter().cloned())
            .collect();
        base.sort();
        base.dedup();

        let mut vocab = Vocab::with_reserved(command_names);
        for sym in &base {
            vocab.push_token(sym.clone());
        }

        let mut learned = base.len();
        while learned < target_learned {
            let mut pair_counts: HashMap<(String, String), usize> = HashMap::new();
            for (syms, count) in &words {
                for pair in syms.windows(2) {
                    *pair_counts
                        .entry((pair[0].clone(), pair[1].clone()))
                        .or_insert(0) += count;
                }
            }
            // Most frequent pair, ties broken lexicographically on the pair.
            let best = pair_counts
                .into_iter()
                .filter(|(_, c)| *c >= 2)
                .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let (pair, _) = match best {
                Some(p) => p,
                None => break,
            };
            let joined = format!("{}{}", pair.0, pair.1);
            for (syms, _) in words.iter_mut() {
                merge_in_place(syms, &pair.0, &pair.1, &joined);
            }
            vocab.merges.push(pair);
            if !vocab.ids.contains_key(&joined) {
                vocab.push_token(joined);
                learned += 1;
            }
        }
        Ok(vocab)
    }

    fn with_reserved(command_names: &[String]) -> Vocab {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
            merges: Vec::new(),
            n_commands: command_names.len(),
        };
        v.push_token(PAD_TOKEN.to_string());
        v.push_token(TERM_TOKEN.to_string());
        v.push_token(UNK_TOKEN.to_string());
        for name in command_names {
            v.push_token(format!("<cmd:{name}>"));
        }
        v
    }

    fn push_token(&mut self, tok: String) {
        debug_assert!(!self.ids.contains_key(&tok), "duplicate token {tok:?}");
        self.ids.insert(tok.clone(), self.tokens.len() as u32);
        self.tokens.push(tok);
    }

    /// Total vocabulary size including reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_reserved(&self) -> usize {
        3 + self.n_commands
    }

    pub fn n_commands(&self) -> usize {
        self.n_commands
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Encodes text to ids, applying merges in rank order within each
    /// whitespace-delimited word; unknown characters map to the unknown id.
    /// The sequence always ends with the termination id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            let mut syms: Vec<String> = w.chars().map(|c| c.to_string()).collect();
            syms.push(EOW.to_string());
            for (l, r) in &self.merges {
                let joined = format!("{l}{r}");
                merge_in_place(&mut syms, l, r, &joined);
            }
            for s in syms {
                out.push(self.ids.get(&s).copied().unwrap_or(UNK_ID));
            }
        }
        out.push(TERM_ID);
        out
    }

    /// Inverts `encode`: stops at the termination id, drops pads and command
    /// tokens, and turns end-of-word markers back into single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut buf = String::new();
        for &id in ids {
            if id == TERM_ID {
                break;
            }
            if id == PAD_ID || self.is_command(id) {
                continue;
            }
            match self.tokens.get(id as usize) {
                Some(t) => buf.push_str(t),
                None => buf.push_str(UNK_TOKEN),
            }
        }
        let mut s = buf.replace(EOW, " ");
        while s.ends_with(' ') {
            s.pop();
        }
        s
    }

    pub fn is_command(&self, id: u32) -> bool {
        (3..3 + self.n_commands as u32).contains(&id)
    }

    /// Vocab file: line 1 `MMVOCAB 1`, then one token per line with `\n`
    /// and `\\` escaped.
    pub fn vocab_file(&self) -> String {
        let mut s = String::from("MMVOCAB 1\n");
        for t in &self.tokens {
            let _ = writeln!(s, "{}", t.replace('\\', "\\\\").replace('\n', "\\n"));
        }
        s
    }

    /// Merges file: `left<TAB>right` per line in rank order.
    pub fn merges_file(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l}\t{r}");
        }
        s
    }

    /// Rebuilds a vocabulary from its two files.
    pub fn from_files(vocab_text: &str, merges_text: &str) -> Result<Vocab> {
        let mut lines = vocab_text.lines();
        match lines.next() {
            Some("MMVOCAB 1") => {}
            other => {
                return Err(DataError::Format(format!(
                    "expected MMVOCAB 1 header, got {other:?}"
                )))
            }
        }
        let tokens: Vec<String> = lines
            .map(|l| unescape(l))
            .collect::<Result<Vec<_>>>()?;
        if tokens.len() < 3 || tokens[0] != PAD_TOKEN || tokens[1] != TERM_TOKEN || tokens[2] != UNK_TOKEN
        {
            return Err(DataError::Format("reserved tokens missing".into()));
        }
        let n_commands = tokens[3..]
            .iter()
            .take_while(|t| t.starts_with("<cmd:"))
            .count();
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(DataError::Format(format!("duplicate token {t:?}")));
            }
        }
        let mut merges = Vec::new();
        for (ln, line) in merges_text.lines().enumerate() {
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| DataError::Format(format!("merges line {ln}: no tab")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        Ok(Vocab { tokens, ids, merges, n_commands })
    }
}

/// One left-to-right pass replacing adjacent `(l, r)` with the joined symbol.
fn merge_in_place(syms: &mut Vec<String>, l: &str, r: &str, joined: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == l && syms[i + 1] == r {
            syms[i] = joined.to_string();
            syms.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            other => return Err(DataError::Format(format!("bad escape {other:?}"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_on_tiny_corpus_is_ab() {
        // Pairs (a,b) and (b,</w>) both occur 3 times; the lexicographic
        // tie-break picks (a,b) first.
        let v = Vocab::learn("ab ab ab", 6, &[]).unwrap();
        assert!(v.id("ab").is_some(), "token ab missing");
        assert_eq!(v.merges[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn target_at_or_below_base_count_learns_no_merges() {
        // Base symbols: a, b, </w>.
        let v = Vocab::learn("ab ab ab", 3, &[]).unwrap();
        assert!(v.merges.is_empty());
        assert_eq!(v.size(), 3 + 3);
    }

    #[test]
    fn relearning_is_bit_identical() {
        let corpus = "the cat sat on the mat the cat ran";
        let a = Vocab::learn(corpus, 30, &["t1".into()]).unwrap();
        let b = Vocab::learn(corpus, 30, &["t1".into()]).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.merges, b.merges);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocab::learn("  \n ", 10, &[]), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn encode_empty_is_just_termination() {
        let v = Vocab::learn("ab", 10, &[]).unwrap();
        assert_eq!(v.encode(""), vec![TERM_ID]);
    }

    #[test]
    fn single_merge_application() {
        // With merge (a,b) available, "abab" becomes ab ab</w>-ish pieces.
        let v = Vocab::learn("ab ab ab", 4, &[]).unwrap();
        // learned: a, b, </w>, then one merge -> "ab".
        let ids = v.encode("abab");
        let toks: Vec<&str> = ids[..ids.len() - 1]
            .iter()
            .map(|&i| v.token(i).unwrap())
            .collect();
        assert_eq!(toks[0], "ab");
        assert_eq!(*ids.last().unwrap(), TERM_ID);
        // Second "ab" carries the end-of-word marker in some split.
        assert!(toks[1..].join("").ends_with("</w>"));
    }

    #[test]
    fn round_trip_on_known_text() {
        let corpus = "kaka kuke miso miso sa kaka sa";
        let v = Vocab::learn(corpus, 40, &[]).unwrap();
        for s in ["kaka", "kuke miso", "sa kaka sa", "", "miso miso miso"] {
            assert_eq!(v.decode(&v.encode(s)), s, "round trip of {s:?}");
        }
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = Vocab::learn("ab ab", 10, &[]).unwrap();
        let ids = v.encode("aZ");
        assert!(ids.contains(&UNK_ID));
    }

    #[test]
    fn file_round_trip() {
        let corpus = "abc abc cab bac";
        let v = Vocab::learn(corpus, 20, &["copy".into(), "rev".into()]).unwrap();
        let v2 = Vocab::from_files(&v.vocab_file(), &v.merges_file()).unwrap();
        assert_eq!(v.tokens, v2.tokens);
        assert_eq!(v.merges, v2.merges);
        assert_eq!(v2.n_commands(), 2);
        assert_eq!(v.encode("cab abc"), v2.encode("cab abc"));
    }

    #[test]
    fn rejects_bad_header() {
        assert!(Vocab::from_files("NOPE\n<pad>\n", "").is_err());
    }
}
