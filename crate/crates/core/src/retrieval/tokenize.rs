//! Script-aware tokenizer: Latin-like text splits on whitespace and
//! punctuation, CJK runs become overlapping character bigrams.

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Cjk,
    Separator,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x31F0..=0x31FF    // katakana phonetic extensions
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x1100..=0x11FF    // hangul jamo
        | 0x3130..=0x318F    // hangul compatibility jamo
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xFF66..=0xFF9D    // halfwidth katakana
        | 0x20000..=0x2FA1F) // supplementary ideographs
}

fn classify(c: char) -> Class {
    if is_cjk(c) {
        Class::Cjk
    } else if c.is_alphanumeric() {
        Class::Word
    } else {
        Class::Separator
    }
}

fn push_cjk_run(run: &[char], out: &mut Vec<String>) {
    match run.len() {
        0 => {}
        1 => out.push(run[0].to_string()),
        _ => out.extend(run.windows(2).map(|w| w.iter().collect::<String>())),
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut cjk: Vec<char> = Vec::new();
    for c in text.chars() {
        match classify(c) {
            Class::Word => {
                push_cjk_run(&cjk, &mut out);
                cjk.clear();
                word.extend(c.to_lowercase());
            }
            Class::Cjk => {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                cjk.push(c);
            }
            Class::Separator => {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                push_cjk_run(&cjk, &mut out);
                cjk.clear();
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    push_cjk_run(&cjk, &mut out);
    out
}
