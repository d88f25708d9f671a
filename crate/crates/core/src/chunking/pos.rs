//! Coarse rule-based part-of-speech tagger used when a trace carries no tags.
//!
//! Closed-class word lists come first, then digit, capitalization and suffix
//! rules. Anything left that contains a letter or digit is tagged `NOUN`;
//! punctuation and whitespace are tagged `X`.

/// Coarse universal-style tags produced by the fallback tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Det,
    Adp,
    Pron,
    Conj,
    Aux,
    Num,
    Propn,
    Adv,
    Verb,
    Adj,
    Noun,
    X,
}

impl Pos {
    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Det => "DET",
            Pos::Adp => "ADP",
            Pos::Pron => "PRON",
            Pos::Conj => "CONJ",
            Pos::Aux => "AUX",
            Pos::Num => "NUM",
            Pos::Propn => "PROPN",
            Pos::Adv => "ADV",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Noun => "NOUN",
            Pos::X => "X",
        }
    }
}

const DET: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "each", "every", "some", "any", "no", "all", "both", "either",
    "neither", "another", "such",
];
const ADP: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto", "over", "under", "about", "above",
    "below", "between", "through", "during", "before", "after", "against", "among", "around", "behind", "beside",
    "near", "without", "within", "across", "along", "toward", "towards", "upon", "via", "like", "per",
];
const PRON: &[&str] = &[
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
    "who",
    "whom",
    "whose",
    "which",
    "what",
    "there",
];
const CONJ: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "because", "although", "though", "while", "whereas", "if", "unless",
    "since", "than", "whether",
];
const AUX: &[&str] = &[
    "is", "am", "are", "was", "were", "be", "been", "being", "have", "has", "had", "do", "does", "did", "will",
    "would", "shall", "should", "can", "could", "may", "might", "must",
];
const ADV: &[&str] = &[
    "not", "very", "also", "just", "too", "then", "here", "now", "only", "still", "even", "again", "never", "always",
    "often", "quite", "rather", "almost",
];
const NUM_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "hundred", "thousand", "million", "first", "second", "third",
];
const ADJ: &[&str] = &[
    "red",
    "blue",
    "green",
    "yellow",
    "black",
    "white",
    "brown",
    "gray",
    "grey",
    "orange",
    "purple",
    "pink",
    "big",
    "small",
    "large",
    "little",
    "tall",
    "short",
    "long",
    "old",
    "new",
    "young",
    "good",
    "bad",
    "high",
    "low",
    "hot",
    "cold",
    "happy",
    "sad",
    "bright",
    "dark",
    "clear",
    "loud",
    "quiet",
    "same",
    "different",
    "many",
    "few",
    "several",
    "other",
    "main",
    "left",
    "right",
];
/// Base forms recognized as verbs, also used as stems for `-ing`/`-ed`/`-s`.
const VERB_STEMS: &[&str] = &[
    "run", "walk", "talk", "play", "look", "jump", "sit", "stand", "hold", "eat", "drink", "read", "write", "show",
    "point", "describe", "move", "make", "take", "give", "use", "contain", "appear", "speak", "sing", "say", "wear",
    "carry", "open", "close", "smile", "laugh", "drive", "ride", "fly", "swim", "cook", "watch", "listen", "hear",
    "see", "mention", "explain", "discuss", "indicate", "suggest", "depict", "feature", "display", "include", "lie",
    "rest", "wait", "hit", "cut", "put", "get", "set", "begin", "stop", "start", "end", "play", "work", "call", "ask",
    "answer", "help", "grow", "fall", "climb", "build", "paint", "draw", "dance", "throw", "catch", "kick", "push",
    "pull",
];
const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "less", "ish", "ical"];

fn strip_word(token: &str) -> &str {
    // Leading word-boundary markers of common subword vocabularies.
    let t = token.trim_start_matches(['▁', 'Ġ', 'Ċ']);
    t.trim_matches(|c: char| !c.is_alphanumeric())
}

fn verb_stem_known(stem: &str) -> bool {
    if VERB_STEMS.contains(&stem) {
        return true;
    }
    // making -> mak + e
    let with_e = format!("{stem}e");
    if VERB_STEMS.contains(&with_e.as_str()) {
        return true;
    }
    // running -> runn -> run
    let b = stem.as_bytes();
    if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
        return VERB_STEMS.contains(&&stem[..stem.len() - 1]);
    }
    false
}

fn is_verb(word: &str) -> bool {
    if VERB_STEMS.contains(&word) {
        return true;
    }
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.len() >= 2 && verb_stem_known(stem) {
                return true;
            }
        }
    }
    // carried -> carri -> carry
    if let Some(stem) = word.strip_suffix("ied") {
        return VERB_STEMS.contains(&format!("{stem}y").as_str());
    }
    false
}

fn tag_word(token: &str, sentence_initial: bool) -> Pos {
    let word = strip_word(token);
    if word.is_empty() {
        return Pos::X;
    }
    if word.chars().all(|c| c.is_ascii_digit())
        || (word.chars().any(|c| c.is_ascii_digit()) && word.parse::<f64>().is_ok())
    {
        return Pos::Num;
    }
    let lower = word.to_lowercase();
    let l = lower.as_str();
    let closed = [
        (DET, Pos::Det),
        (ADP, Pos::Adp),
        (PRON, Pos::Pron),
        (CONJ, Pos::Conj),
        (AUX, Pos::Aux),
    ];
    for (list, tag) in closed {
        if list.contains(&l) {
            return tag;
        }
    }
    if NUM_WORDS.contains(&l) {
        return Pos::Num;
    }
    if ADV.contains(&l) {
        return Pos::Adv;
    }
    if !sentence_initial && word.chars().next().is_some_and(char::is_uppercase) {
        return Pos::Propn;
    }
    if ADJ.contains(&l) {
        return Pos::Adj;
    }
    if is_verb(l) {
        return Pos::Verb;
    }
    if l.len() > 4 && l.ends_with("ly") {
        return Pos::Adv;
    }
    if l.len() > 5 && ADJ_SUFFIXES.iter().any(|s| l.ends_with(s)) {
        return Pos::Adj;
    }
    Pos::Noun
}

/// Tags a single token out of context (treated as mid-sentence).
pub fn tag_pos(token_text: &str) -> &'static str {
    tag_word(token_text, false).as_str()
}

/// Tags a token sequence, treating the first word and every word after
/// terminal punctuation as sentence-initial so capitalization there is not
/// read as a proper noun.
pub fn tag_sequence<S: AsRef<str>>(tokens: &[S]) -> Vec<&'static str> {
    let mut initial = true;
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            let tag = tag_word(t, initial);
            if tag != Pos::X {
                initial = false;
            }
            let trimmed = t.trim_end();
            if trimmed.ends_with(['.', '!', '?', '。', '！', '？']) {
                initial = true;
            }
            tag.as_str()
        })
        .collect()
}
