//! Per-app policies: `app=<name|*> action=allow|block|prioritize|throttle:<bytes_per_sec>:<burst>`.

use std::collections::BTreeMap;
use std::fmt;

use super::DpiConfigError;

pub const DEFAULT_APP: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Allow,
    Block,
    Throttle { rate: u64, burst: u64 },
    Prioritize,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Allow => f.write_str("allow"),
            Action::Block => f.write_str("block"),
            Action::Prioritize => f.write_str("prioritize"),
            Action::Throttle { rate, burst } => write!(f, "throttle:{rate}:{burst}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub app: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    by_app: BTreeMap<String, Action>,
}

impl Default for PolicyTable {
    /// Everything allowed.
    fn default() -> Self {
        PolicyTable { by_app: BTreeMap::from([(DEFAULT_APP.to_string(), Action::Allow)]) }
    }
}

impl PolicyTable {
    pub fn from_policies(policies: Vec<Policy>) -> Result<Self, DpiConfigError> {
        let mut by_app = BTreeMap::new();
        for p in policies {
            if by_app.insert(p.app.clone(), p.action).is_some() {
                return Err(DpiConfigError::Policy { line: 0, reason: format!("duplicate policy for `{}`", p.app) });
            }
        }
        if !by_app.contains_key(DEFAULT_APP) {
            return Err(DpiConfigError::Policy { line: 0, reason: "missing `app=*` default policy".into() });
        }
        Ok(PolicyTable { by_app })
    }

    pub fn default_action(&self) -> Action {
        self.by_app[DEFAULT_APP]
    }

    /// The app's action, falling back to `*`.
    pub fn action_for(&self, app: &str) -> Action {
        self.by_app.get(app).copied().unwrap_or_else(|| self.default_action())
    }

    pub fn policies(&self) -> impl Iterator<Item = Policy> + '_ {
        self.by_app.iter().map(|(app, action)| Policy { app: app.clone(), action: *action })
    }

    pub fn parse(text: &str) -> Result<Self, DpiConfigError> {
        let mut by_app = BTreeMap::new();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            last_line = i + 1;
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| DpiConfigError::Policy { line: i + 1, reason };
            let policy = parse_policy(line).map_err(err)?;
            if by_app.insert(policy.app.clone(), policy.action).is_some() {
                return Err(err(format!("duplicate policy for `{}`", policy.app)));
            }
        }
        if !by_app.contains_key(DEFAULT_APP) {
            return Err(DpiConfigError::Policy { line: last_line, reason: "missing `app=*` default policy".into() });
        }
        Ok(PolicyTable { by_app })
    }
}

fn parse_policy(line: &str) -> Result<Policy, String> {
    let (mut app, mut action) = (None, None);
    for token in line.split_whitespace() {
        match token.split_once('=') {
            Some(("app", v)) if !v.is_empty() => app = Some(v.to_string()),
            Some(("action", v)) => action = Some(parse_action(v)?),
            _ => return Err(format!("unexpected token `{token}`")),
        }
    }
    Ok(Policy { app: app.ok_or("missing app")?, action: action.ok_or("missing action")? })
}

fn parse_action(v: &str) -> Result<Action, String> {
    Ok(match v {
        "allow" => Action::Allow,
        "block" => Action::Block,
        "prioritize" => Action::Prioritize,
        _ => {
            let mut parts = v.split(':');
            if parts.next() != Some("throttle") {
                return Err(format!("unknown action `{v}`"));
            }
            let mut num = || -> Result<u64, String> {
                parts
                    .next()
                    .and_then(|p| p.parse::<u64>().ok())
                    .filter(|n| *n > 0)
                    .ok_or_else(|| format!("throttle needs positive rate and burst, got `{v}`"))
            };
            let (rate, burst) = (num()?, num()?);
            if parts.next().is_some() {
                return Err(format!("trailing fields in `{v}`"));
            }
            Action::Throttle { rate, burst }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_falls_back_to_default() {
        let t = PolicyTable::parse("app=* action=allow\napp=social_like action=block\napp=game_like action=throttle:8000:8000\n").unwrap();
        assert_eq!(t.action_for("social_like"), Action::Block);
        assert_eq!(t.action_for("game_like"), Action::Throttle { rate: 8000, burst: 8000 });
        assert_eq!(t.action_for("skype_like"), Action::Allow);
        assert_eq!(Action::Throttle { rate: 1, burst: 2 }.to_string(), "throttle:1:2");
    }

    #[test]
    fn default_policy_is_mandatory_and_unique() {
        assert!(matches!(PolicyTable::parse("app=a action=allow"), Err(DpiConfigError::Policy { .. })));
        match PolicyTable::parse("app=* action=allow\napp=* action=block") {
            Err(DpiConfigError::Policy { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_actions() {
        for bad in ["throttle", "throttle:0:10", "throttle:10", "throttle:1:2:3", "deny"] {
            assert!(PolicyTable::parse(&format!("app=* action={bad}")).is_err(), "{bad}");
        }
    }
}
