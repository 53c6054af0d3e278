//! Canonical JSON output.
//!
//! Objects and top-level arrays are pretty-printed with two-space indentation;
//! any array nested directly inside another array is written on one line. For
//! manifests this keeps each frame's annotator votes on a single line.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;

#[derive(Default)]
struct CanonicalFormatter {
    // One entry per open container: (is_array, is_inline, has_value).
    stack: Vec<(bool, bool, bool)>,
    indent: usize,
}

impl CanonicalFormatter {
    fn inline(&self) -> bool {
        self.stack.last().is_some_and(|&(_, inline, _)| inline)
    }

    fn newline<W: ?Sized + Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(b"\n")?;
        for _ in 0..self.indent {
            w.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl Formatter for CanonicalFormatter {
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        let inline = self
            .stack
            .last()
            .is_some_and(|&(is_array, inline, _)| is_array || inline);
        self.stack.push((true, inline, false));
        if !inline {
            self.indent += 1;
        }
        w.write_all(b"[")
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        let (_, inline, has_value) = self.stack.pop().unwrap_or((true, false, false));
        if !inline {
            self.indent -= 1;
            if has_value {
                self.newline(w)?;
            }
        }
        w.write_all(b"]")
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        if let Some(top) = self.stack.last_mut() {
            top.2 = true;
        }
        if self.inline() {
            Ok(())
        } else {
            self.newline(w)
        }
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, _w: &mut W) -> io::Result<()> {
        Ok(())
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        let inline = self.inline();
        self.stack.push((false, inline, false));
        if !inline {
            self.indent += 1;
        }
        w.write_all(b"{")
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        let (_, inline, has_value) = self.stack.pop().unwrap_or((false, false, false));
        if !inline {
            self.indent -= 1;
            if has_value {
                self.newline(w)?;
            }
        }
        w.write_all(b"}")
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        if let Some(top) = self.stack.last_mut() {
            top.2 = true;
        }
        if self.inline() {
            Ok(())
        } else {
            self.newline(w)
        }
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        if self.inline() {
            w.write_all(b":")
        } else {
            w.write_all(b": ")
        }
    }
}

/// Serializes `value` in canonical form, terminated by a newline.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
    value
        .serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits utf-8")
}
