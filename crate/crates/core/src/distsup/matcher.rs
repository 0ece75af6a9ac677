use crate::corpus::{KnowledgeStore, MentionSpan, Token};

/// Finds non-overlapping gazetteer names of at least `min_name_tokens` tokens.
///
/// Overlaps are resolved greedily by priority: longer match first, then the
/// leftmost, then the higher instance count. Output is sorted by start.
pub fn match_entities(
    tokens: &[Token],
    store: &KnowledgeStore,
    min_name_tokens: usize,
) -> Vec<MentionSpan> {
    let min_len = min_name_tokens.max(1);
    let lower: Vec<String> = tokens.iter().map(|t| t.lower.clone()).collect();
    let max_len = store.max_name_len().min(lower.len());

    let mut candidates = Vec::new();
    for start in 0..lower.len() {
        for len in min_len..=max_len.min(lower.len() - start) {
            if let Some(e) = store.lookup_name(&lower[start..start + len]) {
                candidates.push((len, start, e));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(b.2.count.cmp(&a.2.count))
            .then(a.2.id.cmp(&b.2.id))
    });

    let mut taken = vec![false; lower.len()];
    let mut spans = Vec::new();
    for (len, start, e) in candidates {
        if taken[start..start + len].iter().any(|&t| t) {
            continue;
        }
        taken[start..start + len].iter_mut().for_each(|t| *t = true);
        spans.push(MentionSpan {
            start,
            end: start + len,
            entity_id: Some(e.id.clone()),
            entity_type: Some(e.entity_type.clone()),
        });
    }
    spans.sort();
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distsup::{label_bio, validate_bio};
    use proptest::prelude::*;
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(rows: &[(&str, &str, &str, u64)]) -> KnowledgeStore {
        let mut b = KnowledgeStore::builder();
        for (n, t, id, c) in rows {
            b.gazetteer_row(n, t, id, *c);
        }
        b.build().unwrap()
    }

    #[test]
    fn fig1_leonardo() {
        let ks = store(&[("leonardo dicaprio", "actor", "e1", 120)]);
        let spans = match_entities(&Token::tokenize("show me movies by leonardo dicaprio"), &ks, 2);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (4, 6));
        assert_eq!(spans[0].entity_type.as_deref(), Some("actor"));
    }

    #[test]
    fn longer_name_retained() {
        let ks = store(&[
            ("leonardo dicaprio", "actor", "e1", 120),
            ("dicaprio", "actor", "e9", 999),
        ]);
        let spans = match_entities(&Token::tokenize("movies by Leonardo DiCaprio"), &ks, 1);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (2, 4));
        assert_eq!(spans[0].entity_id.as_deref(), Some("e1"));
    }

    #[test]
    fn length_filter() {
        let ks = store(&[("titanic", "film", "e2", 300)]);
        assert!(match_entities(&Token::tokenize("titanic"), &ks, 3).is_empty());
        assert_eq!(match_entities(&Token::tokenize("titanic"), &ks, 1).len(), 1);
    }

    #[test]
    fn equal_length_overlap_keeps_leftmost() {
        let ks = store(&[("a b", "x", "e1", 1), ("b c", "x", "e2", 100)]);
        let spans = match_entities(&Token::tokenize("a b c"), &ks, 1);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].entity_id.as_deref(), Some("e1"));
    }

    /// Independent oracle: enumerate every substring, keep gazetteer hits by a
    /// linear scan of the name list, then repeatedly take the best remaining
    /// candidate and discard everything overlapping it.
    fn oracle(query: &[&str], names: &[(Vec<String>, String, u64)], min: usize) -> Vec<(usize, usize)> {
        let mut cands: Vec<(usize, usize, u64, String)> = Vec::new();
        for i in 0..query.len() {
            for j in i + 1..=query.len() {
                if j - i < min {
                    continue;
                }
                let sub: Vec<String> = query[i..j].iter().map(|s| s.to_string()).collect();
                // homonyms resolve to max count, then smaller id
                let best = names
                    .iter()
                    .filter(|(n, _, _)| *n == sub)
                    .max_by(|a, b| a.2.cmp(&b.2).then(b.1.cmp(&a.1)));
                if let Some((_, id, c)) = best {
                    cands.push((i, j, *c, id.clone()));
                }
            }
        }
        let mut chosen = Vec::new();
        while !cands.is_empty() {
            let mut best = 0;
            for k in 1..cands.len() {
                let (a, b) = (&cands[k], &cands[best]);
                let better = (a.1 - a.0) > (b.1 - b.0)
                    || ((a.1 - a.0) == (b.1 - b.0)
                        && (a.0 < b.0 || (a.0 == b.0 && (a.2 > b.2 || (a.2 == b.2 && a.3 < b.3)))));
                if better {
                    best = k;
                }
            }
            let (s, e, _, _) = cands.swap_remove(best);
            cands.retain(|c| c.1 <= s || e <= c.0);
            chosen.push((s, e));
        }
        chosen.sort();
        chosen
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_queries() {
        let vocab = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut names = Vec::new();
        let mut b = KnowledgeStore::builder();
        for i in 0..50 {
            let len = rng.random_range(1..=3);
            let name: Vec<String> = (0..len).map(|_| vocab.choose(&mut rng).unwrap().to_string()).collect();
            let id = format!("e{i:02}");
            let count = rng.random_range(1..20);
            b.gazetteer_row(&name.join(" "), "t", &id, count);
            names.push((name, id, count));
        }
        let ks = b.build().unwrap();
        for _ in 0..1000 {
            let q: Vec<&str> = (0..8).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
            let min = rng.random_range(1..=3);
            let got: Vec<(usize, usize)> = match_entities(&Token::tokenize(&q.join(" ")), &ks, min)
                .iter()
                .map(|s| (s.start, s.end))
                .collect();
            assert_eq!(got, oracle(&q, &names, min), "query {q:?} min {min}");
        }
    }

    proptest! {
        #[test]
        fn disjoint_valid_and_order_invariant(
            rows in prop::collection::vec(("[abc]( [abc]){0,2}", 1u64..10), 1..15),
            query in prop::collection::vec("[abc]", 1..10),
            min in 1usize..3,
        ) {
            let rows: Vec<(String, String, u64)> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (n, c))| (n, format!("e{i}"), c))
                .collect();
            let build = |rows: &[(String, String, u64)]| {
                let mut b = KnowledgeStore::builder();
                for (n, id, c) in rows {
                    b.gazetteer_row(n, "t", id, *c);
                }
                b.build().unwrap()
            };
            let toks = Token::tokenize(&query.join(" "));
            let fwd = match_entities(&toks, &build(&rows), min);
            let mut rev = rows.clone();
            rev.reverse();
            prop_assert_eq!(&fwd, &match_entities(&toks, &build(&rev), min));
            for w in fwd.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            prop_assert!(validate_bio(&label_bio(&toks, &fwd).unwrap().bio));
        }
    }
}
