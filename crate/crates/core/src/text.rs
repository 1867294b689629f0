//! Deterministic tokenizer and a small rule/lexicon tagger.
//!
//! Tokens are runs of letters/digits, single punctuation characters, and
//! English clitics (`'s`, `n't`, `'re`, ...). Every token carries its char
//! and byte range into the source, so slicing reproduces it exactly.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Bumped whenever tokenization or tagging output changes.
pub const TOKENIZER_VERSION: u32 = 1;

/// Reserved question-history markers.
pub const QUESTION_MARKER: &str = "<Q>";
pub const ANSWER_MARKER: &str = "<A>";

/// Coarse 12-way part-of-speech tagset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Num,
    Conj,
    Prt,
    Punct,
    Other,
}

impl PosTag {
    pub const COUNT: usize = 12;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// 8-way entity tagset: seven entity classes plus `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NerTag {
    None,
    Person,
    Org,
    Loc,
    Date,
    Time,
    Number,
    Misc,
}

impl NerTag {
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Half-open `[start, end)` range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub lower: String,
    pub lemma: String,
    pub pos_tag: PosTag,
    pub ner_tag: NerTag,
    /// Offsets in chars (Unicode scalar values) into the source text.
    pub char_range: Span,
    /// Offsets in bytes into the source text.
    pub byte_range: Span,
}

impl TokenRecord {
    /// A reserved marker token (`<Q>` or `<A>`) with an empty range.
    pub fn marker(text: &str) -> Self {
        Self {
            text: text.into(),
            lower: text.into(),
            lemma: text.into(),
            pos_tag: PosTag::Other,
            ner_tag: NerTag::None,
            char_range: Span::new(0, 0),
            byte_range: Span::new(0, 0),
        }
    }

    pub fn is_marker(&self) -> bool {
        self.text == QUESTION_MARKER || self.text == ANSWER_MARKER
    }
}

const CLITICS: &[&str] = &["s", "re", "ve", "ll", "d", "m"];

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits `text` into raw `(byte_start, byte_end)` pieces.
fn split(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_alphanumeric() {
            out.push((byte_at(i), byte_at(i + 1)));
            i += 1;
            continue;
        }
        let start = i;
        let all_digits = |from: usize, to: usize| chars[from..to].iter().all(|(_, c)| c.is_ascii_digit());
        while i < chars.len() {
            let ch = chars[i].1;
            if ch.is_alphanumeric() {
                i += 1;
            } else if (ch == '.' || ch == ',' || ch == ':')
                && all_digits(start, i)
                && chars.get(i + 1).is_some_and(|(_, n)| n.is_ascii_digit())
            {
                // 3.5, 1,000, 10:30
                i += 1;
            } else {
                break;
            }
        }
        // Clitic following the word: cat's, they're, don't.
        if i < chars.len() && is_apostrophe(chars[i].1) {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_alphabetic() {
                j += 1;
            }
            let tail: String = chars[i + 1..j].iter().map(|(_, c)| c.to_ascii_lowercase()).collect();
            let word_lower_ends_n = chars[i - 1].1.eq_ignore_ascii_case(&'n');
            if tail == "t" && word_lower_ends_n && i - 1 > start {
                out.push((byte_at(start), byte_at(i - 1)));
                out.push((byte_at(i - 1), byte_at(j)));
                i = j;
                continue;
            }
            if CLITICS.contains(&tail.as_str()) {
                out.push((byte_at(start), byte_at(i)));
                out.push((byte_at(i), byte_at(j)));
                i = j;
                continue;
            }
        }
        out.push((byte_at(start), byte_at(i)));
    }
    out
}

/// Tokenizes and tags `text`.
pub fn tokenize(text: &str) -> Vec<TokenRecord> {
    let pieces = split(text);
    // char offset for each byte offset we need
    let mut char_of_byte = alloc::collections::BTreeMap::new();
    for (ci, (b, _)) in text.char_indices().enumerate() {
        char_of_byte.insert(b, ci);
    }
    char_of_byte.insert(text.len(), text.chars().count());

    let mut tokens: Vec<TokenRecord> = Vec::with_capacity(pieces.len());
    for (bs, be) in pieces {
        let raw = &text[bs..be];
        let lower = raw.to_lowercase();
        let lemma = lemmatize(&lower);
        tokens.push(TokenRecord {
            text: raw.to_string(),
            lower,
            lemma,
            pos_tag: PosTag::Other,
            ner_tag: NerTag::None,
            char_range: Span::new(char_of_byte[&bs], char_of_byte[&be]),
            byte_range: Span::new(bs, be),
        });
    }
    tag(&mut tokens);
    tokens
}

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "every", "each", "some", "any", "no", "all", "another", "both",
    "either", "neither",
];
const PRONOUNS: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "me",
    "him",
    "her",
    "us",
    "them",
    "my",
    "your",
    "his",
    "its",
    "our",
    "their",
    "who",
    "whom",
    "whose",
    "what",
    "which",
    "mine",
    "yours",
    "hers",
    "ours",
    "theirs",
    "myself",
    "yourself",
    "himself",
    "herself",
    "itself",
    "ourselves",
    "themselves",
    "someone",
    "something",
    "anyone",
    "anything",
    "everyone",
    "everything",
    "nobody",
    "nothing",
];
const ADPOSITIONS: &[&str] = &[
    "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "to", "from", "of", "off", "over", "under", "near", "behind", "across", "since",
    "until", "without", "within", "along", "around", "among", "upon", "toward", "towards", "like",
];
const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "because", "although", "though", "if", "while", "whereas", "than", "unless",
];
const PARTICLES: &[&str] = &["not", "n't", "'s", "’s"];
const ADVERBS: &[&str] = &[
    "very", "too", "also", "just", "only", "then", "there", "here", "now", "never", "always", "often", "again",
    "where", "when", "why", "how", "yes", "soon", "already", "still", "ever", "once", "later", "away", "back",
];
const AUXILIARIES: &[&str] = &[
    "is", "am", "are", "was", "were", "be", "been", "being", "do", "does", "did", "have", "has", "had", "will",
    "would", "can", "could", "shall", "should", "may", "might", "must", "'re", "'ve", "'ll", "'d", "'m",
];
const NUMBER_WORDS: &[&str] = &[
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
    "twenty",
    "thirty",
    "forty",
    "fifty",
    "hundred",
    "thousand",
    "million",
    "billion",
    "first",
    "second",
    "third",
];
const DATE_WORDS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
    "today",
    "yesterday",
    "tomorrow",
];
const TIME_WORDS: &[&str] =
    &["noon", "midnight", "morning", "evening", "night", "afternoon", "a.m.", "p.m.", "am", "pm"];
const TITLES: &[&str] = &["mr", "mrs", "ms", "dr", "miss", "sir", "lady", "lord", "king", "queen", "president"];
const ORG_SUFFIXES: &[&str] =
    &["inc", "corp", "company", "university", "college", "association", "council", "party", "club", "school"];
const PLACE_PREPOSITIONS: &[&str] = &["in", "at", "from", "to", "near"];
const IRREGULAR: &[(&str, &str)] = &[
    ("is", "be"),
    ("am", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("'re", "be"),
    ("'m", "be"),
    ("has", "have"),
    ("had", "have"),
    ("'ve", "have"),
    ("does", "do"),
    ("did", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("saw", "see"),
    ("seen", "see"),
    ("made", "make"),
    ("took", "take"),
    ("taken", "take"),
    ("gave", "give"),
    ("given", "give"),
    ("came", "come"),
    ("said", "say"),
    ("told", "tell"),
    ("found", "find"),
    ("got", "get"),
    ("ran", "run"),
    ("ate", "eat"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("mice", "mouse"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("n't", "not"),
];

fn lemmatize(lower: &str) -> String {
    if let Some((_, l)) = IRREGULAR.iter().find(|(w, _)| *w == lower) {
        return (*l).into();
    }
    let n = lower.chars().count();
    if !lower.chars().all(|c| c.is_alphabetic()) {
        return lower.into();
    }
    if n > 4 && lower.ends_with("ies") {
        return alloc::format!("{}y", &lower[..lower.len() - 3]);
    }
    if n > 4
        && (lower.ends_with("sses") || lower.ends_with("ches") || lower.ends_with("shes") || lower.ends_with("xes"))
    {
        return lower[..lower.len() - 2].into();
    }
    if n > 3 && lower.ends_with('s') && !lower.ends_with("ss") && !lower.ends_with("us") && !lower.ends_with("is") {
        return lower[..lower.len() - 1].into();
    }
    if n > 5 && lower.ends_with("ing") {
        return lower[..lower.len() - 3].into();
    }
    if n > 4 && lower.ends_with("ed") {
        return lower[..lower.len() - 2].into();
    }
    lower.into()
}

fn capitalized(text: &str) -> bool {
    text.chars().next().is_some_and(char::is_uppercase)
}

fn sentence_start(prev: Option<&TokenRecord>) -> bool {
    match prev {
        None => true,
        Some(p) => matches!(p.text.as_str(), "." | "!" | "?" | "\"" | "“" | ":" | ";") || p.is_marker(),
    }
}

fn pos_of(tok: &TokenRecord) -> PosTag {
    let w = tok.lower.as_str();
    if !w.chars().any(char::is_alphanumeric) {
        return PosTag::Punct;
    }
    if w.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',' || c == ':') || NUMBER_WORDS.contains(&w) {
        return PosTag::Num;
    }
    if DETERMINERS.contains(&w) {
        PosTag::Det
    } else if PRONOUNS.contains(&w) {
        PosTag::Pron
    } else if PARTICLES.contains(&w) {
        PosTag::Prt
    } else if AUXILIARIES.contains(&w) {
        PosTag::Verb
    } else if ADPOSITIONS.contains(&w) {
        PosTag::Adp
    } else if CONJUNCTIONS.contains(&w) {
        PosTag::Conj
    } else if ADVERBS.contains(&w) || (w.len() > 4 && w.ends_with("ly")) {
        PosTag::Adv
    } else if (w.len() > 5 && w.ends_with("ing")) || (w.len() > 4 && w.ends_with("ed")) {
        PosTag::Verb
    } else if ["ous", "ful", "able", "ible", "ive", "less", "ic", "al"]
        .iter()
        .any(|s| w.len() > s.len() + 2 && w.ends_with(s))
    {
        PosTag::Adj
    } else if !tok.text.chars().any(char::is_alphabetic) {
        PosTag::Other
    } else {
        PosTag::Noun
    }
}

fn ner_of(tokens: &[TokenRecord], i: usize) -> NerTag {
    let tok = &tokens[i];
    let w = tok.lower.as_str();
    let prev = i.checked_sub(1).map(|p| &tokens[p]);
    if DATE_WORDS.contains(&w) || (w.len() == 4 && w.starts_with(['1', '2']) && w.chars().all(|c| c.is_ascii_digit())) {
        return NerTag::Date;
    }
    if TIME_WORDS.contains(&w) || (w.contains(':') && w.chars().all(|c| c.is_ascii_digit() || c == ':')) {
        return NerTag::Time;
    }
    if tok.pos_tag == PosTag::Num {
        return NerTag::Number;
    }
    if !capitalized(&tok.text) || tok.pos_tag != PosTag::Noun {
        return NerTag::None;
    }
    if ORG_SUFFIXES.contains(&w) || tokens.get(i + 1).is_some_and(|n| ORG_SUFFIXES.contains(&n.lower.as_str())) {
        return NerTag::Org;
    }
    let is_title = |j: usize| TITLES.contains(&tokens[j].lower.as_str());
    let after_title = match i {
        0 => false,
        1 => is_title(0),
        _ => is_title(i - 1) || (tokens[i - 1].text == "." && is_title(i - 2)),
    };
    if after_title {
        return NerTag::Person;
    }
    if prev.is_some_and(|p| PLACE_PREPOSITIONS.contains(&p.lower.as_str())) {
        return NerTag::Loc;
    }
    if prev.is_some_and(|p| p.ner_tag == NerTag::Person && capitalized(&p.text)) {
        return NerTag::Person;
    }
    if sentence_start(prev) {
        // Capitalized sentence-initial nouns followed by a verb read as names.
        return match tokens.get(i + 1) {
            Some(n) if pos_of(n) == PosTag::Verb || n.lower == "'s" => NerTag::Person,
            _ => NerTag::None,
        };
    }
    NerTag::Person
}

fn tag(tokens: &mut [TokenRecord]) {
    for t in tokens.iter_mut() {
        t.pos_tag = pos_of(t);
    }
    for i in 0..tokens.len() {
        let ner = ner_of(tokens, i);
        tokens[i].ner_tag = ner;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn clitic_split() {
        assert_eq!(texts("The cat's hat."), ["The", "cat", "'s", "hat", "."]);
        assert_eq!(texts("I don't know"), ["I", "do", "n't", "know"]);
        assert_eq!(texts("they're here"), ["they", "'re", "here"]);
        assert_eq!(texts("'quoted'"), ["'", "quoted", "'"]);
    }

    #[test]
    fn numbers_stay_whole() {
        assert_eq!(
            texts("It cost 3.50, or 1,000 at 10:30."),
            ["It", "cost", "3.50", ",", "or", "1,000", "at", "10:30", "."]
        );
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn tags_cover_simple_sentence() {
        let toks = tokenize("Mr. Smith went to Paris on Monday with two dogs quickly.");
        let pos: Vec<PosTag> = toks.iter().map(|t| t.pos_tag).collect();
        // Mr . Smith went to Paris on Monday with two dogs quickly .
        assert_eq!(toks[2].ner_tag, NerTag::Person);
        assert_eq!(toks[5].ner_tag, NerTag::Loc);
        assert_eq!(toks[7].ner_tag, NerTag::Date);
        assert_eq!(toks[9].ner_tag, NerTag::Number);
        assert_eq!(pos[4], PosTag::Adp);
        assert_eq!(pos[11], PosTag::Adv);
        assert_eq!(pos[12], PosTag::Punct);
        assert_eq!(toks[10].lemma, "dog");
        assert_eq!(toks[3].lemma, "go");
    }

    #[test]
    fn unicode_offsets() {
        let s = "Café “Zoë” naïve";
        let toks = tokenize(s);
        let chars: Vec<char> = s.chars().collect();
        for t in &toks {
            let via_chars: String = chars[t.char_range.start..t.char_range.end].iter().collect();
            assert_eq!(via_chars, t.text);
            assert_eq!(&s[t.byte_range.start..t.byte_range.end], t.text);
        }
    }

    proptest! {
        #[test]
        fn lossless(s in "[ a-zA-Z0-9.,'!?:;\\-\"éü’]{0,60}") {
            let toks = tokenize(&s);
            // slices plus the gaps between them reproduce the input
            let mut rebuilt = String::new();
            let mut at = 0;
            for t in &toks {
                prop_assert!(t.byte_range.start >= at);
                let gap = &s[at..t.byte_range.start];
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(gap);
                prop_assert_eq!(&s[t.byte_range.start..t.byte_range.end], t.text.as_str());
                rebuilt.push_str(&t.text);
                at = t.byte_range.end;
            }
            rebuilt.push_str(&s[at..]);
            prop_assert_eq!(rebuilt, s);
        }
    }
}
