// SPDX-License-Identifier: MIT OR Apache-2.0

//! Streaming CoNLL-U reader.
//!
//! Multiword-token ranges (`1-2`) and empty nodes (`1.1`) are skipped; words
//! of a multiword token take the character span of its surface form.
//! Sentences whose rows cannot be parsed, whose ids are not `1..n`, or whose
//! heads do not form a tree rooted at 0 are reported as [`SkippedSentence`]
//! and reading continues with the next sentence.

use std::io::BufRead;

use crate::types::CharSpan;

/// One syntactic word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConlluToken {
    /// 1-based word index.
    pub id: usize,
    /// Surface form.
    pub form: String,
    /// Lemma.
    pub lemma: String,
    /// Universal POS tag.
    pub upos: String,
    /// Morphological features (`_` when absent).
    pub feats: String,
    /// Head word index, 0 for the root.
    pub head: usize,
    /// Dependency relation, possibly with a subtype (`obl:tmod`).
    pub deprel: String,
    /// Character span in the sentence text.
    pub span: CharSpan,
}

impl ConlluToken {
    /// Relation without its subtype.
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }

    /// Value of feature `key`.
    pub fn feat(&self, key: &str) -> Option<&str> {
        self.feats
            .split('|')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }
}

/// A dependency-parsed sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    /// `# sent_id`, or the 1-based ordinal of the sentence in the stream.
    pub sent_id: String,
    /// `# text`, or the forms joined according to `SpaceAfter`.
    pub text: String,
    /// Words in order; `tokens[i].id == i + 1`.
    pub tokens: Vec<ConlluToken>,
}

impl ParsedSentence {
    /// Indices (0-based) of the words whose head is word `index` (0-based).
    pub fn dependents(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.head == index + 1)
            .map(|(i, _)| i)
    }

    /// 0-based index of the head of word `index`, `None` for the root.
    pub fn head_of(&self, index: usize) -> Option<usize> {
        self.tokens[index].head.checked_sub(1)
    }
}

/// A sentence that could not be read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedSentence {
    /// First line of the sentence block (1-based).
    pub line: usize,
    /// Sentence id if one was declared.
    pub sent_id: Option<String>,
    /// What was wrong.
    pub reason: String,
}

#[derive(Default)]
struct Block {
    start_line: usize,
    sent_id: Option<String>,
    text: Option<String>,
    // (line number, columns)
    words: Vec<(usize, Vec<String>)>,
    // (first id, last id, surface, space_after)
    multiword: Vec<(usize, usize, String, bool)>,
    error: Option<String>,
}

/// Iterator over the sentences of a CoNLL-U stream.
pub struct ConlluReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    ordinal: usize,
    done: bool,
}

impl<R: BufRead> ConlluReader<R> {
    /// Wraps a reader.
    pub fn new(reader: R) -> Self {
        ConlluReader {
            lines: reader.lines(),
            line_no: 0,
            ordinal: 0,
            done: false,
        }
    }

    fn finish(&mut self, block: Block) -> Result<ParsedSentence, SkippedSentence> {
        self.ordinal += 1;
        let skip = |reason: String| SkippedSentence {
            line: block.start_line,
            sent_id: block.sent_id.clone(),
            reason,
        };
        if let Some(e) = &block.error {
            return Err(skip(e.clone()));
        }
        build_sentence(&block, self.ordinal).map_err(skip)
    }
}

fn space_after(misc: &str) -> bool {
    !misc.split('|').any(|m| m == "SpaceAfter=No")
}

fn build_sentence(block: &Block, ordinal: usize) -> Result<ParsedSentence, String> {
    if block.words.is_empty() {
        return Err("sentence has no words".into());
    }
    let n = block.words.len();
    let mut tokens = Vec::with_capacity(n);
    for (i, (line, cols)) in block.words.iter().enumerate() {
        let id: usize = cols[0]
            .parse()
            .map_err(|_| format!("line {line}: bad id {:?}", cols[0]))?;
        if id != i + 1 {
            return Err(format!("line {line}: expected id {}, found {id}", i + 1));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| format!("line {line}: bad head {:?}", cols[6]))?;
        if head > n {
            return Err(format!("line {line}: head {head} beyond sentence length {n}"));
        }
        tokens.push(ConlluToken {
            id,
            form: cols[1].clone(),
            lemma: cols[2].clone(),
            upos: cols[3].clone(),
            feats: cols[5].clone(),
            head,
            deprel: cols[7].clone(),
            span: CharSpan::new(0, 0),
        });
    }
    check_tree(&tokens)?;

    // surface units: multiword tokens or single words, with their SpaceAfter
    let mut units: Vec<(usize, usize, String, bool)> = Vec::new();
    let mut i = 1;
    while i <= n {
        if let Some(mw) = block.multiword.iter().find(|m| m.0 == i) {
            if mw.1 > n || mw.1 < mw.0 {
                return Err(format!("multiword range {}-{} out of bounds", mw.0, mw.1));
            }
            units.push(mw.clone());
            i = mw.1 + 1;
        } else {
            let (_, cols) = &block.words[i - 1];
            units.push((i, i, cols[1].clone(), space_after(&cols[9])));
            i += 1;
        }
    }

    let text = match &block.text {
        Some(t) => t.clone(),
        None => {
            let mut t = String::new();
            for (k, (_, _, surface, space)) in units.iter().enumerate() {
                t.push_str(surface);
                if *space && k + 1 < units.len() {
                    t.push(' ');
                }
            }
            t
        }
    };
    let chars: Vec<char> = text.chars().collect();
    let mut cursor = 0usize;
    for (first, last, surface, _) in &units {
        let target: Vec<char> = surface.chars().collect();
        let found = (cursor..=chars.len().saturating_sub(target.len()))
            .find(|&s| chars[s..s + target.len()] == target[..])
            .ok_or_else(|| format!("form {surface:?} not found in text after offset {cursor}"))?;
        let span = CharSpan::new(found, found + target.len());
        for t in &mut tokens[first - 1..*last] {
            t.span = span;
        }
        cursor = span.end;
    }
    Ok(ParsedSentence {
        sent_id: block.sent_id.clone().unwrap_or_else(|| ordinal.to_string()),
        text,
        tokens,
    })
}

fn check_tree(tokens: &[ConlluToken]) -> Result<(), String> {
    let roots = tokens.iter().filter(|t| t.head == 0).count();
    if roots != 1 {
        return Err(format!("expected one root, found {roots}"));
    }
    for start in 0..tokens.len() {
        let mut node = start;
        let mut steps = 0;
        while tokens[node].head != 0 {
            node = tokens[node].head - 1;
            steps += 1;
            if steps > tokens.len() {
                return Err(format!("cycle through word {}", start + 1));
            }
        }
    }
    Ok(())
}

impl<R: BufRead> Iterator for ConlluReader<R> {
    type Item = Result<ParsedSentence, SkippedSentence>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut block: Option<Block> = None;
        loop {
            let line = match self.lines.next() {
                Some(Ok(l)) => l,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(SkippedSentence {
                        line: self.line_no + 1,
                        sent_id: None,
                        reason: format!("read error: {e}"),
                    }));
                }
                None => {
                    self.done = true;
                    return block.map(|b| self.finish(b));
                }
            };
            self.line_no += 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                match block.take() {
                    Some(b) => return Some(self.finish(b)),
                    None => continue,
                }
            }
            let b = block.get_or_insert_with(|| Block {
                start_line: self.line_no,
                ..Default::default()
            });
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "sent_id" => b.sent_id = Some(value.trim().to_string()),
                        "text" => b.text = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            if b.error.is_some() {
                continue;
            }
            let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
            if cols.len() != 10 {
                b.error = Some(format!(
                    "line {}: expected 10 columns, found {}",
                    self.line_no,
                    cols.len()
                ));
                continue;
            }
            if cols[0].contains('.') {
                continue;
            }
            if let Some((a, z)) = cols[0].split_once('-') {
                match (a.parse::<usize>(), z.parse::<usize>()) {
                    (Ok(a), Ok(z)) => b.multiword.push((a, z, cols[1].clone(), space_after(&cols[9]))),
                    _ => b.error = Some(format!("line {}: bad range {:?}", self.line_no, cols[0])),
                }
                continue;
            }
            b.words.push((self.line_no, cols));
        }
    }
}

/// Parses a whole CoNLL-U document.
pub fn parse_str(text: &str) -> (Vec<ParsedSentence>, Vec<SkippedSentence>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for item in ConlluReader::new(text.as_bytes()) {
        match item {
            Ok(s) => ok.push(s),
            Err(e) => bad.push(e),
        }
    }
    (ok, bad)
}
