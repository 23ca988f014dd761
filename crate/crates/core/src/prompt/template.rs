//! Logic-less section templates (a mustache subset).
//!
//! Supported tags: `{{name}}`, `{{#name}}…{{/name}}`, `{{^name}}…{{/name}}`
//! and `{{! comment}}`. Whitespace inside the braces is ignored, so
//! `{{/ name}}` closes `{{#name}}`. Values are substituted verbatim, there is
//! no HTML escaping. Section, inverted, close and comment tags that sit alone
//! on a line take the whole line with them.

use std::collections::BTreeSet;

use serde_json::Value;

use super::PromptError;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Text(String),
    Var(String),
    Section {
        name: String,
        inverted: bool,
        children: Vec<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub body: String,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sigil {
    Var,
    Open,
    Inverted,
    Close,
    Comment,
}

impl Template {
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Result<Self, PromptError> {
        let name = name.into();
        let body = body.into();
        let nodes = parse_nodes(&name, &body)?;
        Ok(Self { name, body, nodes })
    }

    /// Every variable and section name used anywhere in the body.
    pub fn required_vars(&self) -> BTreeSet<String> {
        fn walk(nodes: &[Node], out: &mut BTreeSet<String>) {
            for n in nodes {
                match n {
                    Node::Text(_) => {}
                    Node::Var(v) => {
                        if v != "." {
                            out.insert(v.clone());
                        }
                    }
                    Node::Section { name, children, .. } => {
                        out.insert(name.clone());
                        walk(children, out);
                    }
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.nodes, &mut out);
        out
    }

    pub fn render(&self, bindings: &Value) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() * 2);
        let mut stack = vec![bindings];
        render_nodes(&self.name, &self.nodes, &mut stack, &mut out)?;
        Ok(out)
    }
}

/// Convenience wrapper: parse and render in one go.
pub fn render(template: &Template, bindings: &Value) -> Result<String, PromptError> {
    template.render(bindings)
}

/// Mustache truthiness: absent, `null`, `false`, `""` and `[]` are falsy.
pub fn is_truthy(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) | Some(Value::Bool(false)) => false,
        Some(Value::String(s)) => !s.is_empty(),
        Some(Value::Array(a)) => !a.is_empty(),
        Some(_) => true,
    }
}

fn lookup<'a>(stack: &[&'a Value], name: &str) -> Option<&'a Value> {
    if name == "." {
        return stack.last().copied();
    }
    let mut parts = name.split('.');
    let first = parts.next()?;
    let mut found = stack.iter().rev().find_map(|ctx| ctx.as_object().and_then(|o| o.get(first)))?;
    for p in parts {
        found = found.as_object()?.get(p)?;
    }
    Some(found)
}

fn render_nodes<'a>(tpl: &str, nodes: &'a [Node], stack: &mut Vec<&'a Value>, out: &mut String) -> Result<(), PromptError> {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Var(name) => match lookup(stack, name) {
                None | Some(Value::Null) => {
                    return Err(PromptError::MissingVariable {
                        template: tpl.to_string(),
                        variable: name.clone(),
                    })
                }
                Some(Value::String(s)) => out.push_str(s),
                Some(other) => out.push_str(&other.to_string()),
            },
            Node::Section {
                name,
                inverted,
                children,
            } => {
                let value = lookup(stack, name);
                let truthy = is_truthy(value);
                if *inverted {
                    if !truthy {
                        render_nodes(tpl, children, stack, out)?;
                    }
                    continue;
                }
                if !truthy {
                    continue;
                }
                let value = value.expect("truthy implies present");
                match value {
                    Value::Array(items) => {
                        for item in items {
                            stack.push(item);
                            let r = render_nodes(tpl, children, stack, out);
                            stack.pop();
                            r?;
                        }
                    }
                    other => {
                        stack.push(other);
                        let r = render_nodes(tpl, children, stack, out);
                        stack.pop();
                        r?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn parse_nodes(tpl: &str, body: &str) -> Result<Vec<Node>, PromptError> {
    let err = |message: String| PromptError::Parse {
        template: tpl.to_string(),
        message,
    };
    // (name, inverted, children) frames; the bottom frame is the root.
    let mut frames: Vec<(String, bool, Vec<Node>)> = vec![(String::new(), false, Vec::new())];
    let mut text = String::new();
    let mut pos = 0;
    while let Some(rel) = body[pos..].find("{{") {
        let open = pos + rel;
        let close = body[open + 2..]
            .find("}}")
            .map(|r| open + 2 + r)
            .ok_or_else(|| err(format!("unterminated tag at byte {open}")))?;
        let inner = body[open + 2..close].trim();
        let (sigil, name) = match inner.chars().next() {
            Some('#') => (Sigil::Open, inner[1..].trim()),
            Some('^') => (Sigil::Inverted, inner[1..].trim()),
            Some('/') => (Sigil::Close, inner[1..].trim()),
            Some('!') => (Sigil::Comment, ""),
            Some('&') => (Sigil::Var, inner[1..].trim()),
            _ => (Sigil::Var, inner),
        };
        if sigil != Sigil::Comment && (name.is_empty() || name.contains(char::is_whitespace)) {
            return Err(err(format!("bad tag name `{inner}` at byte {open}")));
        }
        let mut before = &body[pos..open];
        let mut after = close + 2;
        if sigil != Sigil::Var {
            let line_start = body[..open].rfind('\n').map(|i| i + 1).unwrap_or(0);
            let line_end = body[after..].find('\n').map(|i| after + i + 1).unwrap_or(body.len());
            // A tag earlier on the same line leaves `pos` past `line_start`.
            let lead_ok = line_start >= pos && body[line_start..open].chars().all(|c| c == ' ' || c == '\t');
            let trail_ok = body[after..line_end].trim().is_empty();
            if lead_ok && trail_ok {
                before = &body[pos..line_start];
                after = line_end;
            }
        }
        text.push_str(before);
        pos = after;
        if sigil != Sigil::Comment && !text.is_empty() {
            frames.last_mut().expect("root frame").2.push(Node::Text(std::mem::take(&mut text)));
        }
        match sigil {
            Sigil::Comment => {}
            Sigil::Var => frames.last_mut().expect("root frame").2.push(Node::Var(name.to_string())),
            Sigil::Open | Sigil::Inverted => frames.push((name.to_string(), sigil == Sigil::Inverted, Vec::new())),
            Sigil::Close => {
                if frames.len() == 1 {
                    return Err(err(format!("close tag `{name}` without an open section")));
                }
                let (open_name, inverted, children) = frames.pop().expect("checked");
                if open_name != name {
                    return Err(err(format!("section `{open_name}` closed by `{name}`")));
                }
                frames.last_mut().expect("root frame").2.push(Node::Section {
                    name: open_name,
                    inverted,
                    children,
                });
            }
        }
    }
    text.push_str(&body[pos..]);
    if frames.len() != 1 {
        let open: Vec<&str> = frames[1..].iter().map(|f| f.0.as_str()).collect();
        return Err(err(format!("unclosed section(s): {}", open.join(", "))));
    }
    let mut root = frames.pop().expect("root frame").2;
    if !text.is_empty() {
        root.push(Node::Text(text));
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn r(body: &str, b: Value) -> String {
        Template::parse("t", body).unwrap().render(&b).unwrap()
    }

    #[test]
    fn empty_variable_renders_empty() {
        assert_eq!(r("{{x}}", json!({"x": ""})), "");
    }

    #[test]
    fn verbatim_substitution() {
        assert_eq!(r("a {{x}} b", json!({"x": "<&\">"})), "a <&\"> b");
        assert_eq!(r("{{n}}", json!({"n": 15.55})), "15.55");
    }

    /// Truth table: for every binding shape, exactly one of the positive and
    /// inverted branches is emitted.
    #[test]
    fn section_truth_table() {
        let tpl = Template::parse("t", "{{#p}}P{{/p}}{{^p}}N{{/p}}").unwrap();
        let cases: Vec<(Option<Value>, &str)> = vec![
            (None, "N"),
            (Some(Value::Null), "N"),
            (Some(json!(false)), "N"),
            (Some(json!("")), "N"),
            (Some(json!([])), "N"),
            (Some(json!(true)), "P"),
            (Some(json!("x")), "P"),
            (Some(json!(0)), "P"),
            (Some(json!({})), "P"),
            (Some(json!([1, 2])), "PP"),
        ];
        for (value, expected) in cases {
            let mut b = serde_json::Map::new();
            if let Some(v) = value.clone() {
                b.insert("p".into(), v);
            }
            assert_eq!(tpl.render(&Value::Object(b)).unwrap(), expected, "binding {value:?}");
        }
    }

    #[test]
    fn inverted_branch_when_prefix_absent() {
        let body = "{{#input_prefix}}\n{{input_prefix}} {{input}}\n{{/input_prefix}}\n{{^input_prefix}}\n{{input}}\n{{/input_prefix}}\n";
        assert_eq!(r(body, json!({"input": "x"})), "x\n");
        assert_eq!(r(body, json!({"input": "x", "input_prefix": "input:"})), "input: x\n");
    }

    #[test]
    fn spaced_close_tags() {
        assert_eq!(r("{{#a}}A{{/ a}}", json!({"a": true})), "A");
    }

    #[test]
    fn missing_variable_is_named() {
        let err = Template::parse("t", "{{#a}}{{b}}{{/a}}").unwrap().render(&json!({"a": true})).unwrap_err();
        match err {
            PromptError::MissingVariable { variable, .. } => assert_eq!(variable, "b"),
            other => panic!("{other:?}"),
        }
        // unreachable variables are fine
        assert_eq!(r("{{#a}}{{b}}{{/a}}", json!({})), "");
    }

    #[test]
    fn unbalanced_is_parse_error() {
        for body in ["{{#a}}", "{{/a}}", "{{#a}}{{/b}}", "{{#a}}{{#b}}{{/a}}{{/b}}", "{{x"] {
            assert!(matches!(Template::parse("t", body), Err(PromptError::Parse { .. })), "{body}");
        }
    }

    #[test]
    fn iteration_and_dot() {
        assert_eq!(r("{{#xs}}[{{.}}]{{/xs}}", json!({"xs": ["a", "b"]})), "[a][b]");
        assert_eq!(r("{{#xs}}{{k}}{{/xs}}", json!({"xs": [{"k": 1}, {"k": 2}]})), "12");
        assert_eq!(r("{{a.b}}", json!({"a": {"b": "deep"}})), "deep");
        assert_eq!(r("{{#o}}{{top}}{{/o}}", json!({"o": {"x": 1}, "top": "T"})), "T");
    }

    #[test]
    fn standalone_lines_vanish() {
        let body = "A\n  {{#s}}\nB\n  {{/s}}\nC\n{{! note }}\nD";
        assert_eq!(r(body, json!({"s": true})), "A\nB\nC\nD");
        assert_eq!(r(body, json!({})), "A\nC\nD");
        // not standalone: text shares the line
        assert_eq!(r("x {{#s}}y{{/s}}\n", json!({"s": true})), "x y\n");
    }

    #[test]
    fn required_vars_lists_everything() {
        let t = Template::parse("t", "{{#a}}{{b}}{{/a}}{{^c}}{{d.e}}{{/c}}{{.}}").unwrap();
        let v: Vec<String> = t.required_vars().into_iter().collect();
        assert_eq!(v, ["a", "b", "c", "d.e"]);
    }
}
