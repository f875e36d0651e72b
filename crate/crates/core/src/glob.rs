//! Glob matching for file rules.
//!
//! `*` matches any run of characters including path separators, `?` matches
//! exactly one character, everything else is literal. Rules are matched
//! against the full path, so `*.pdf` covers PDFs in any directory and
//! `/safe/*` covers a directory tree.

/// Iterative two-pointer matcher with backtracking over the last `*`.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;

    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ni));
            pi += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extension_rules() {
        assert!(glob_match("*.pdf", "report.pdf"));
        assert!(glob_match("*.pdf", "dir/sub/report.pdf"));
        assert!(!glob_match("*.pdf", "report.pdf.bak"));
        assert!(!glob_match("*.pdf", "temp.txt"));
    }

    #[test]
    fn directory_rules() {
        assert!(glob_match("/safe/*", "/safe/notes.txt"));
        assert!(glob_match("/safe/*", "/safe/deep/notes.txt"));
        assert!(!glob_match("/safe/*", "/other/notes.txt"));
    }

    #[test]
    fn question_mark_and_literals() {
        assert!(glob_match("f?o", "foo"));
        assert!(!glob_match("f?o", "fo"));
        assert!(glob_match("exact.txt", "exact.txt"));
        assert!(!glob_match("exact.txt", "exact.txt2"));
        assert!(glob_match("*", ""));
        assert!(glob_match("**", "anything/at/all"));
        assert!(!glob_match("", "x"));
        assert!(glob_match("", ""));
    }

    proptest! {
        // A literal pattern matches exactly itself.
        #[test]
        fn literal_self_match(name in "[a-z./]{0,24}") {
            prop_assert!(glob_match(&name, &name));
        }

        // A star appended anywhere in a literal still matches the original.
        #[test]
        fn star_insertion_keeps_match(name in "[a-z./]{0,24}", split in 0usize..25) {
            let split = split.min(name.len());
            let with_star = format!("{}*{}", &name[..split], &name[split..]);
            prop_assert!(glob_match(&with_star, &name));
        }

        // Equivalence against a simple recursive reference matcher.
        #[test]
        fn agrees_with_reference(pattern in "[ab?*]{0,8}", name in "[ab]{0,8}") {
            fn reference(p: &[char], n: &[char]) -> bool {
                match (p.first(), n.first()) {
                    (None, None) => true,
                    (Some('*'), _) => {
                        reference(&p[1..], n) || (!n.is_empty() && reference(p, &n[1..]))
                    }
                    (Some('?'), Some(_)) => reference(&p[1..], &n[1..]),
                    (Some(c), Some(d)) if c == d => reference(&p[1..], &n[1..]),
                    _ => false,
                }
            }
            let p: Vec<char> = pattern.chars().collect();
            let n: Vec<char> = name.chars().collect();
            prop_assert_eq!(glob_match(&pattern, &name), reference(&p, &n));
        }
    }
}
