use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCount {
    pub word: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeSummary {
    pub cluster_id: i32,
    pub top_words: Vec<WordCount>,
    pub num_images: usize,
}

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_word_list(STOPWORDS)
}

pub(crate) fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Lowercased alphanumeric runs of at least three characters that are not stopwords.
pub fn tokenize_caption<'a>(
    caption: &'a str,
    stopwords: &'a HashSet<String>,
) -> impl Iterator<Item = String> + 'a {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 3)
        .map(str::to_lowercase)
        .filter(move |t| !stopwords.contains(t))
}

/// Most frequent caption words per cluster. `captions` pairs each image's
/// cluster label with its caption; noise (`-1`) is summarized like any other
/// label. Output is ordered by cluster id.
pub fn theme_words(
    captions: &[(i32, &str)],
    top_k: usize,
    stopwords: &HashSet<String>,
) -> Vec<ThemeSummary> {
    let mut groups: BTreeMap<i32, (usize, HashMap<String, usize>)> = BTreeMap::new();
    for &(label, caption) in captions {
        let (n, counts) = groups.entry(label).or_default();
        *n += 1;
        for tok in tokenize_caption(caption, stopwords) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    groups
        .into_iter()
        .map(|(cluster_id, (num_images, counts))| {
            let mut words: Vec<WordCount> = counts
                .into_iter()
                .map(|(word, count)| WordCount { word, count })
                .collect();
            words.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.word.cmp(&b.word)));
            words.truncate(top_k);
            ThemeSummary {
                cluster_id,
                top_words: words,
                num_images,
            }
        })
        .collect()
}
