use crate::corpus::Tag;

/// A maximal labelled span `[start, end)` of one domain-slot pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub pair: usize,
    pub start: usize,
    pub end: usize,
}

/// conlleval-style chunking: a span opens on `B-x`, or on `I-x` not continuing
/// an `x` span, and extends over following `I-x`. Special tags act as `O`.
pub fn spans(tags: &[usize]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &t) in tags.iter().enumerate() {
        let tag = Tag::from_index(t);
        let continues = matches!((tag, open), (Some(Tag::Inside(p)), Some(s)) if s.pair == p);
        if continues {
            if let Some(s) = open.as_mut() {
                s.end = i + 1;
            }
            continue;
        }
        out.extend(open.take());
        if let Some(Tag::Begin(p) | Tag::Inside(p)) = tag {
            open = Some(Span {
                pair: p,
                start: i,
                end: i + 1,
            });
        }
    }
    out.extend(open);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(tag: Tag) -> usize {
        tag.index()
    }

    #[test]
    fn basic_chunks() {
        let o = t(Tag::Outside);
        let seq = [t(Tag::Cls), o, t(Tag::Begin(3)), t(Tag::Inside(3)), o, t(Tag::Inside(1)), t(Tag::Sep)];
        assert_eq!(
            spans(&seq),
            vec![
                Span { pair: 3, start: 2, end: 4 },
                Span { pair: 1, start: 5, end: 6 }
            ]
        );
        let adjacent = [t(Tag::Begin(0)), t(Tag::Begin(0)), t(Tag::Inside(0)), t(Tag::Inside(2))];
        assert_eq!(spans(&adjacent).len(), 3);
    }
}
