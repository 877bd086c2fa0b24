//! Lenient tag/attribute tokenizer for publisher HTML and aggregator RSS.
//!
//! Never fails: unterminated constructs become [`Token::Invalid`] and the
//! scan resumes at the next byte. Element names and attribute names are
//! lowercased; attribute values are entity-decoded.

use std::borrow::Cow;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub self_closing: bool,
    /// Byte offset of the `<`.
    pub offset: usize,
}

impl Tag {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// Whitespace-separated class tokens.
    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.attr("class").unwrap_or("").split_ascii_whitespace()
    }

    pub fn has_class_containing(&self, needle: &str) -> bool {
        self.classes().any(|c| c.to_ascii_lowercase().contains(needle))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token<'a> {
    Start(Tag),
    End {
        name: String,
        offset: usize,
    },
    Text {
        raw: &'a str,
        offset: usize,
    },
    CData {
        raw: &'a str,
        offset: usize,
    },
    Comment,
    /// A `<` that does not open a well-formed construct.
    Invalid {
        offset: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `script` and `style` bodies are skipped as raw text.
    Html,
    Xml,
}

pub struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
    mode: Mode,
    raw_text_until: Option<&'static str>,
}

impl<'a> Tokenizer<'a> {
    pub fn new(src: &'a str, mode: Mode) -> Self {
        Self {
            src,
            pos: 0,
            mode,
            raw_text_until: None,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_raw_text(&mut self, close: &str) -> Option<Token<'a>> {
        let start = self.pos;
        let lower = self.rest().to_ascii_lowercase();
        let end = lower.find(close).map_or(self.src.len(), |i| start + i);
        self.pos = end;
        (end > start).then(|| Token::Text {
            raw: &self.src[start..end],
            offset: start,
        })
    }

    fn read_tag(&mut self) -> Option<Token<'a>> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = start + 1;
        let closing = bytes.get(i) == Some(&b'/');
        if closing {
            i += 1;
        }
        let name_start = i;
        while i < bytes.len() && is_name_byte(bytes[i]) {
            i += 1;
        }
        if i == name_start || !bytes[name_start].is_ascii_alphabetic() {
            return None;
        }
        let name = self.src[name_start..i].to_ascii_lowercase();
        let mut attrs = Vec::new();
        let mut self_closing = false;
        loop {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            match bytes.get(i) {
                None => return None,
                Some(b'>') => {
                    i += 1;
                    break;
                }
                Some(b'/') => {
                    self_closing = bytes.get(i + 1) == Some(&b'>');
                    i += 1;
                    continue;
                }
                Some(b'<') => return None,
                _ => {}
            }
            let key_start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'=' | b'>' | b'/' | b'<') {
                i += 1;
            }
            if i == key_start {
                i += 1;
                continue;
            }
            let key = self.src[key_start..i].to_ascii_lowercase();
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            let mut value = String::new();
            if bytes.get(i) == Some(&b'=') {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                match bytes.get(i) {
                    Some(&q @ (b'"' | b'\'')) => {
                        let v_start = i + 1;
                        let v_end = self.src[v_start..].find(q as char).map(|n| v_start + n)?;
                        value = decode_entities(&self.src[v_start..v_end]).into_owned();
                        i = v_end + 1;
                    }
                    _ => {
                        let v_start = i;
                        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                            i += 1;
                        }
                        value = decode_entities(&self.src[v_start..i]).into_owned();
                    }
                }
            }
            attrs.push((key, value));
        }
        self.pos = i;
        if closing {
            return Some(Token::End { name, offset: start });
        }
        if self.mode == Mode::Html && !self_closing {
            self.raw_text_until = match name.as_str() {
                "script" => Some("</script"),
                "style" => Some("</style"),
                _ => None,
            };
        }
        Some(Token::Start(Tag {
            name,
            attrs,
            self_closing,
            offset: start,
        }))
    }
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b':' | b'.')
}

impl<'a> Iterator for Tokenizer<'a> {
    type Item = Token<'a>;

    fn next(&mut self) -> Option<Token<'a>> {
        if let Some(close) = self.raw_text_until.take() {
            if let Some(text) = self.skip_raw_text(close) {
                return Some(text);
            }
        }
        let rest = self.rest();
        if rest.is_empty() {
            return None;
        }
        let start = self.pos;
        if !rest.starts_with('<') {
            let len = rest.find('<').unwrap_or(rest.len());
            self.pos += len;
            return Some(Token::Text {
                raw: &rest[..len],
                offset: start,
            });
        }
        if let Some(body) = rest.strip_prefix("<!--") {
            self.pos += 4 + body.find("-->").map_or(body.len(), |n| n + 3);
            return Some(Token::Comment);
        }
        if let Some(body) = rest.strip_prefix("<![CDATA[") {
            return match body.find("]]>") {
                Some(n) => {
                    self.pos += 9 + n + 3;
                    Some(Token::CData {
                        raw: &body[..n],
                        offset: start,
                    })
                }
                None => {
                    self.pos += 1;
                    Some(Token::Invalid { offset: start })
                }
            };
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            self.pos += rest.find('>').map_or(rest.len(), |n| n + 1);
            return Some(Token::Comment);
        }
        match self.read_tag() {
            Some(tok) => Some(tok),
            None => {
                self.pos = start + 1;
                Some(Token::Invalid { offset: start })
            }
        }
    }
}

/// Decode the five XML entities plus numeric character references. Unknown
/// named entities are left verbatim.
pub fn decode_entities(s: &str) -> Cow<'_, str> {
    if !s.contains('&') {
        return Cow::Borrowed(s);
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').filter(|&n| n <= 10).and_then(|semi| {
            let entity = &rest[1..semi];
            let ch = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => entity
                    .strip_prefix("#x")
                    .or_else(|| entity.strip_prefix("#X"))
                    .map(|h| u32::from_str_radix(h, 16).ok())
                    .unwrap_or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    Cow::Owned(out)
}
