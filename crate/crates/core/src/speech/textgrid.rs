//! Interval-tier alignment files in both the long and short text layouts.
//!
//! Both layouts carry the same sequence of values; the long one only adds
//! `key =` labels and `[i]` indices. The tokenizer drops those and the parser
//! reads the value sequence.

use super::SpeechError;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Str(String),
    Num(f64),
    Flag(String),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, SpeechError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut line = 1;
    let err = |line: usize, message: String| SpeechError::Parse { line, message };
    while let Some((start, c)) = chars.next() {
        match c {
            '\n' => line += 1,
            '"' => {
                let at = line;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, '"')) => {
                            if matches!(chars.peek(), Some((_, '"'))) {
                                chars.next();
                                s.push('"');
                            } else {
                                break;
                            }
                        }
                        Some((_, ch)) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                        }
                        None => return Err(err(at, "unterminated string".into())),
                    }
                }
                tokens.push((at, Token::Str(s)));
            }
            '[' => {
                for (_, ch) in chars.by_ref() {
                    if ch == ']' {
                        break;
                    }
                }
            }
            '<' => {
                let mut s = String::new();
                for (_, ch) in chars.by_ref() {
                    if ch == '>' {
                        break;
                    }
                    s.push(ch);
                }
                tokens.push((line, Token::Flag(s)));
            }
            '!' => {
                while let Some((_, ch)) = chars.peek() {
                    if *ch == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut end = start + c.len_utf8();
                while let Some(&(i, ch)) = chars.peek() {
                    if ch.is_ascii_digit() || matches!(ch, '.' | 'e' | 'E' | '-' | '+') {
                        end = i + ch.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let lit = &text[start..end];
                let value = lit.parse::<f64>().map_err(|_| err(line, format!("bad number {lit:?}")))?;
                tokens.push((line, Token::Num(value)));
            }
            c if c.is_alphabetic() || c == '_' => {
                while let Some(&(_, ch)) = chars.peek() {
                    if ch.is_alphanumeric() || ch == '_' || ch == '?' {
                        chars.next();
                    } else {
                        break;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub xmin: f64,
    pub xmax: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tier {
    pub name: String,
    /// Point tiers are parsed with `xmin == xmax`.
    pub is_interval: bool,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGrid {
    pub xmin: f64,
    pub xmax: f64,
    pub tiers: Vec<Tier>,
}

struct Cursor {
    tokens: std::vec::IntoIter<(usize, Token)>,
    line: usize,
}

impl Cursor {
    fn next(&mut self) -> Result<Token, SpeechError> {
        match self.tokens.next() {
            Some((line, t)) => {
                self.line = line;
                Ok(t)
            }
            None => Err(SpeechError::Parse {
                line: self.line,
                message: "unexpected end of file".into(),
            }),
        }
    }

    fn fail<T>(&self, message: String) -> Result<T, SpeechError> {
        Err(SpeechError::Parse { line: self.line, message })
    }

    fn string(&mut self) -> Result<String, SpeechError> {
        match self.next()? {
            Token::Str(s) => Ok(s),
            t => self.fail(format!("expected a string, found {t:?}")),
        }
    }

    fn number(&mut self) -> Result<f64, SpeechError> {
        match self.next()? {
            Token::Num(v) => Ok(v),
            t => self.fail(format!("expected a number, found {t:?}")),
        }
    }

    fn count(&mut self) -> Result<usize, SpeechError> {
        let v = self.number()?;
        if v < 0.0 || v.fract() != 0.0 {
            return self.fail(format!("expected a count, found {v}"));
        }
        Ok(v as usize)
    }
}

pub fn parse_textgrid(text: &str) -> Result<TextGrid, SpeechError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut cur = Cursor {
        tokens: tokenize(text)?.into_iter(),
        line: 1,
    };
    if cur.string()? != "ooTextFile" {
        return cur.fail("not a text-format grid file".into());
    }
    if cur.string()? != "TextGrid" {
        return cur.fail("object class is not TextGrid".into());
    }
    let xmin = cur.number()?;
    let xmax = cur.number()?;
    let has_tiers = match cur.next()? {
        Token::Flag(f) => f == "exists",
        t => return cur.fail(format!("expected <exists> or <absent>, found {t:?}")),
    };
    let mut tiers = Vec::new();
    if has_tiers {
        let size = cur.count()?;
        for _ in 0..size {
            let class = cur.string()?;
            let name = cur.string()?;
            let _tier_min = cur.number()?;
            let _tier_max = cur.number()?;
            let n = cur.count()?;
            let is_interval = match class.as_str() {
                "IntervalTier" => true,
                "TextTier" => false,
                other => return cur.fail(format!("unknown tier class {other:?}")),
            };
            let mut intervals = Vec::with_capacity(n);
            for _ in 0..n {
                let a = cur.number()?;
                let b = if is_interval { cur.number()? } else { a };
                intervals.push(Interval {
                    xmin: a,
                    xmax: b,
                    text: cur.string()?,
                });
            }
            tiers.push(Tier { name, is_interval, intervals });
        }
    }
    Ok(TextGrid { xmin, xmax, tiers })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LONG: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.21
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 0.21
        intervals: size = 1
        intervals [1]:
            xmin = 0
            xmax = 0.21
            text = "but"
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.21
        intervals: size = 2
        intervals [1]:
            xmin = 0
            xmax = 0.07
            text = "B"
        intervals [2]:
            xmin = 0.07
            xmax = 0.21
            text = "AH"
"#;

    const SHORT: &str = "\"ooTextFile\"\n\"TextGrid\"\n0\n0.21\n<exists>\n2\n\"IntervalTier\"\n\"words\"\n0\n0.21\n1\n0\n0.21\n\"but\"\n\"IntervalTier\"\n\"phones\"\n0\n0.21\n2\n0\n0.07\n\"B\"\n0.07\n0.21\n\"AH\"\n";

    #[test]
    fn long_and_short_layouts_agree() {
        let long = parse_textgrid(LONG).unwrap();
        assert_eq!(long, parse_textgrid(SHORT).unwrap());
        assert_eq!(long.tiers.len(), 2);
        let phones = &long.tiers[1];
        assert_eq!(phones.name, "phones");
        assert_eq!(phones.intervals[1], Interval { xmin: 0.07, xmax: 0.21, text: "AH".into() });
    }

    #[test]
    fn quotes_points_and_errors() {
        let grid = "\"ooTextFile\"\n\"TextGrid\"\n0 1 <exists> 1\n\"TextTier\" \"marks\" 0 1 1\n0.5 \"say \"\"hi\"\"\"\n";
        let g = parse_textgrid(grid).unwrap();
        assert!(!g.tiers[0].is_interval);
        assert_eq!(g.tiers[0].intervals[0].text, "say \"hi\"");
        assert!(matches!(parse_textgrid("\"ooTextFile\"\n\"TextGrid\"\n0 1 <exists> 1\n\"IntervalTier\" \"p\" 0 1 2\n0 1 \"a\"\n"), Err(SpeechError::Parse { .. })));
        assert!(matches!(parse_textgrid("\"ooTextFile\"\n\"Sound\"\n"), Err(SpeechError::Parse { line: 2, .. })));
        assert!(matches!(parse_textgrid("\"unterminated"), Err(SpeechError::Parse { .. })));
    }
}
