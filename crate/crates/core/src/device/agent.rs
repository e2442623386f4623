//! Text command vocabulary of the control agent (tcp/5555) and the byte
//! framing that turns a stream into requests.

use std::collections::BTreeMap;

pub const CONTROL_PORT: u16 = 5555;
/// Largest manifest body `install` accepts.
pub const MAX_MANIFEST_BYTES: usize = 1 << 20;
/// A line longer than this without LF is answered with a failure and dropped.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

pub const SUCCESS: &str = "Success";

pub fn failure(reason: &str) -> String {
    format!("Failure [{reason}]")
}

/// True for the line that ends every reply.
pub fn is_terminator(line: &str) -> bool {
    line == SUCCESS || (line.starts_with("Failure [") && line.ends_with(']'))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    AmStart {
        action: Option<String>,
        component: Option<(String, String)>,
        extras: BTreeMap<String, String>,
    },
    AmForceStop(String),
    PmListPackages { paths: bool },
    PmUninstall(String),
    Install { apk_name: String, len: usize },
}

/// Why a line is not a command; rendered inside `Failure [..]`.
pub type Rejection = &'static str;

pub fn parse_command(line: &str) -> Result<Command, Rejection> {
    let words: Vec<&str> = line.split_ascii_whitespace().collect();
    match words.as_slice() {
        ["shell", "am", "start", rest @ ..] => parse_am_start(rest),
        ["shell", "am", "force-stop", pkg] => Ok(Command::AmForceStop(pkg.to_string())),
        ["shell", "pm", "list", "packages"] => Ok(Command::PmListPackages { paths: false }),
        ["shell", "pm", "list", "packages", "-f"] => Ok(Command::PmListPackages { paths: true }),
        ["shell", "pm", "uninstall", pkg] => Ok(Command::PmUninstall(pkg.to_string())),
        ["install", rest @ ..] => parse_install(rest),
        _ => Err("unknown command"),
    }
}

fn parse_am_start(mut args: &[&str]) -> Result<Command, Rejection> {
    let mut action = None;
    let mut component = None;
    let mut extras = BTreeMap::new();
    while let Some((flag, rest)) = args.split_first() {
        match (*flag, rest) {
            ("-a", [value, tail @ ..]) => {
                action = Some(value.to_string());
                args = tail;
            }
            ("-n", [value, tail @ ..]) => {
                let (pkg, act) = value.split_once('/').ok_or("invalid component")?;
                if pkg.is_empty() || act.is_empty() {
                    return Err("invalid component");
                }
                // `pkg/.Activity` is shorthand for a name relative to the package.
                let act = act.strip_prefix('.').unwrap_or(act);
                component = Some((pkg.to_string(), act.to_string()));
                args = tail;
            }
            ("-e" | "--es", [key, value, tail @ ..]) => {
                extras.insert(key.to_string(), value.to_string());
                args = tail;
            }
            _ => return Err("unknown command"),
        }
    }
    Ok(Command::AmStart { action, component, extras })
}

fn parse_install(args: &[&str]) -> Result<Command, Rejection> {
    let args = match args {
        ["-r", rest @ ..] => rest,
        _ => args,
    };
    // `-rName.apk` glued together, as often typed.
    let (name, len) = match args {
        [name, len] => (name.strip_prefix("-r").unwrap_or(name), *len),
        _ => return Err("usage: install <apk_name> <byte-count>"),
    };
    if name.is_empty() {
        return Err("usage: install <apk_name> <byte-count>");
    }
    let len: usize = len.parse().map_err(|_| "usage: install <apk_name> <byte-count>")?;
    if len > MAX_MANIFEST_BYTES {
        return Err("manifest too large");
    }
    Ok(Command::Install { apk_name: name.to_string(), len })
}

/// One unit of work cut from the byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Line(String),
    Install { apk_name: String, body: Vec<u8> },
    /// Bytes that cannot be a command (bad UTF-8, overlong line).
    Garbage(Rejection),
}

/// Agent-side framing: splits LF-terminated lines and collects the body
/// that follows an `install` header.
#[derive(Debug, Default)]
pub struct ControlStream {
    buf: Vec<u8>,
    body: Option<(String, usize)>,
}

impl ControlStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes waiting for a terminating LF or the rest of a body.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Request> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        loop {
            if let Some((name, len)) = &self.body {
                if self.buf.len() < *len {
                    break;
                }
                let body: Vec<u8> = self.buf.drain(..*len).collect();
                out.push(Request::Install { apk_name: name.clone(), body });
                self.body = None;
                continue;
            }
            let Some(nl) = self.buf.iter().position(|&b| b == b'\n') else {
                if self.buf.len() > MAX_LINE_BYTES {
                    self.buf.clear();
                    out.push(Request::Garbage("line too long"));
                }
                break;
            };
            let raw: Vec<u8> = self.buf.drain(..=nl).collect();
            let raw = &raw[..raw.len() - 1];
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            match std::str::from_utf8(raw) {
                Err(_) => out.push(Request::Garbage("invalid utf-8")),
                Ok(line) => match parse_command(line) {
                    Ok(Command::Install { apk_name, len }) => self.body = Some((apk_name, len)),
                    _ => out.push(Request::Line(line.to_string())),
                },
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary() {
        assert_eq!(parse_command("shell pm list packages -f"), Ok(Command::PmListPackages { paths: true }));
        assert_eq!(
            parse_command("shell am start -n com.skype.test/CallActivity"),
            Ok(Command::AmStart {
                action: None,
                component: Some(("com.skype.test".into(), "CallActivity".into())),
                extras: BTreeMap::new()
            })
        );
        assert_eq!(
            parse_command("install -rTwitter_3.0.1.apk 12"),
            Ok(Command::Install { apk_name: "Twitter_3.0.1.apk".into(), len: 12 })
        );
        assert_eq!(parse_command("reboot"), Err("unknown command"));
        assert_eq!(parse_command(""), Err("unknown command"));
        assert_eq!(parse_command("shell am start -a"), Err("unknown command"));
    }

    #[test]
    fn stream_collects_install_body() {
        let mut s = ControlStream::new();
        let reqs = s.push(b"shell pm list packages -f\ninstall A.apk 5\nab");
        assert_eq!(reqs, vec![Request::Line("shell pm list packages -f".into())]);
        let reqs = s.push(b"c\nde\nshell am force-stop x\n");
        assert_eq!(
            reqs,
            vec![
                Request::Install { apk_name: "A.apk".into(), body: b"abc\nd".to_vec() },
                Request::Line("e".into()),
                Request::Line("shell am force-stop x".into()),
            ]
        );
        assert_eq!(s.buffered(), 0);
    }

    #[test]
    fn stream_rejects_bad_bytes() {
        let mut s = ControlStream::new();
        assert_eq!(s.push(b"\xff\xfe\n"), vec![Request::Garbage("invalid utf-8")]);
        let long = vec![b'x'; MAX_LINE_BYTES + 1];
        assert_eq!(s.push(&long), vec![Request::Garbage("line too long")]);
        assert_eq!(s.buffered(), 0);
    }

    proptest! {
        #[test]
        fn stream_split_points_do_not_matter(cut in 0usize..60) {
            let text = b"shell pm list packages\ninstall B.apk 4\nwxyzshell am force-stop b\n";
            let cut = cut.min(text.len());
            let mut whole = ControlStream::new();
            let expect = whole.push(text);
            let mut split = ControlStream::new();
            let mut got = split.push(&text[..cut]);
            got.extend(split.push(&text[cut..]));
            prop_assert_eq!(got, expect);
        }
    }
}
