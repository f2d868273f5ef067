//! Source model: extracts primitive-type parameter sites from code under
//! test, binds test inputs to those sites, and rewrites number literals
//! into context formats.
//!
//! The front end parses the class/method/constructor grammar of a
//! mainstream C-family object language (Java grammar via tree-sitter);
//! extraction is purely syntactic and deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser, Tree};

use crate::error::{Error, Result};
use crate::registry::{ReadabilityContext, TypeGroup, DEFAULT_FIXED_GROUP_WIDTH};

/// Operator tokens that count as "involving" a number parameter.
const TRACKED_OPERATORS: [&str; 12] = [
    "|", "&", "^", "~", "<<", ">>", ">>>", "%", "+", "-", "*", "/",
];

/// Primitive parameter types in scope. `char` and `boolean` are excluded:
/// their value ranges are small enough to pose no readability question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeclaredType {
    String,
    Byte,
    Short,
    Int,
    Long,
    Float,
    Double,
}

impl DeclaredType {
    pub fn group(self) -> TypeGroup {
        match self {
            DeclaredType::String => TypeGroup::String,
            _ => TypeGroup::Number,
        }
    }

    fn from_type_text(text: &str) -> Option<Self> {
        Some(match text {
            "String" | "java.lang.String" => DeclaredType::String,
            "byte" => DeclaredType::Byte,
            "short" => DeclaredType::Short,
            "int" => DeclaredType::Int,
            "long" => DeclaredType::Long,
            "float" => DeclaredType::Float,
            "double" => DeclaredType::Double,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UnitKind {
    CodeUnderTest,
    Test,
}

/// One source file (or stdin payload) to analyze.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub path: String,
    pub text: String,
    pub kind: UnitKind,
}

impl SourceUnit {
    pub fn new(path: impl Into<String>, text: impl Into<String>, kind: UnitKind) -> Self {
        Self { path: path.into(), text: text.into(), kind }
    }
}

/// Stable identity of a parameter site.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteKey {
    pub class_id: String,
    pub method_sig: String,
    pub param_index: usize,
}

/// A primitive-type parameter of a method or constructor under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSite {
    pub class_id: String,
    pub method_sig: String,
    pub param_name: String,
    pub param_index: usize,
    pub declared_type: DeclaredType,
    /// Verbatim declaration text plus attached comments; never the class.
    pub method_source: String,
    /// Operator tokens applied to this parameter; empty for string sites.
    pub operators: BTreeSet<String>,
}

impl ParameterSite {
    pub fn key(&self) -> SiteKey {
        SiteKey {
            class_id: self.class_id.clone(),
            method_sig: self.method_sig.clone(),
            param_index: self.param_index,
        }
    }

    /// Method simple name (text before the parameter list).
    pub fn method_name(&self) -> &str {
        self.method_sig.split('(').next().unwrap_or(&self.method_sig)
    }
}

/// How a test argument resolved to a literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InputOrigin {
    DirectLiteral,
    LocalVarLiteral,
    FinalStaticField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValueKind {
    String,
    Number,
}

/// A concrete test input bound to a parameter site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundInput {
    #[serde(flatten)]
    pub site: SiteKey,
    /// For strings, the unescaped content between the quotes; for numbers,
    /// the literal token as written (sign included).
    pub literal_text: String,
    pub value_kind: ValueKind,
    pub origin: InputOrigin,
    pub test_id: String,
}

/// A bound input plus the byte range of its literal, for source rewriting.
#[derive(Debug, Clone)]
pub(crate) struct SpannedInput {
    pub input: BoundInput,
    /// Byte range of the literal token in the unit text.
    pub literal_range: Range<usize>,
    /// Node id of the enclosing argument list; groups same-call rewrites.
    pub call_id: usize,
}

fn parse_java(unit: &SourceUnit) -> Result<Tree> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_java::LANGUAGE.into())
        .expect("java grammar loads");
    let tree = parser
        .parse(&unit.text, None)
        .ok_or_else(|| Error::Parse { path: unit.path.clone(), line: 0, column: 0 })?;
    if tree.root_node().has_error() {
        let node = first_error_node(tree.root_node());
        let pos = node.map(|n| n.start_position()).unwrap_or_default();
        return Err(Error::Parse {
            path: unit.path.clone(),
            line: pos.row + 1,
            column: pos.column + 1,
        });
    }
    Ok(tree)
}

fn first_error_node(root: Node) -> Option<Node> {
    let mut cursor = root.walk();
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node.is_error() || node.is_missing() {
            return Some(node);
        }
        for child in node.children(&mut cursor).collect::<Vec<_>>() {
            stack.push(child);
        }
    }
    None
}

fn node_text<'a>(node: Node, text: &'a str) -> &'a str {
    &text[node.byte_range()]
}

fn is_comment(kind: &str) -> bool {
    matches!(kind, "line_comment" | "block_comment")
}

/// Walk every node depth-first in source order.
fn walk_nodes<'t>(root: Node<'t>, visit: &mut dyn FnMut(Node<'t>)) {
    let mut cursor = root.walk();
    let mut reached_root = false;
    while !reached_root {
        visit(cursor.node());
        if cursor.goto_first_child() {
            continue;
        }
        loop {
            if cursor.goto_next_sibling() {
                break;
            }
            if !cursor.goto_parent() {
                reached_root = true;
                break;
            }
        }
    }
}

/// Fully qualified name of the class enclosing `node`.
fn enclosing_class_id(node: Node, text: &str, package: &str) -> String {
    let mut names = Vec::new();
    let mut current = Some(node);
    while let Some(n) = current {
        if matches!(
            n.kind(),
            "class_declaration" | "interface_declaration" | "enum_declaration" | "record_declaration"
        ) {
            if let Some(name) = n.child_by_field_name("name") {
                names.push(node_text(name, text).to_string());
            }
        }
        current = n.parent();
    }
    names.reverse();
    let class_path = names.join(".");
    if package.is_empty() {
        class_path
    } else {
        format!("{package}.{class_path}")
    }
}

fn package_name(root: Node, text: &str) -> String {
    let mut cursor = root.walk();
    for child in root.children(&mut cursor) {
        if child.kind() == "package_declaration" {
            for i in 0..child.named_child_count() {
                let n = child.named_child(i).unwrap();
                if matches!(n.kind(), "scoped_identifier" | "identifier") {
                    return node_text(n, text).to_string();
                }
            }
        }
    }
    String::new()
}

/// Declaration text plus immediately preceding comment block.
fn declaration_with_comments(decl: Node, text: &str) -> String {
    let mut start = decl.start_byte();
    let mut prev = decl.prev_sibling();
    while let Some(p) = prev {
        if is_comment(p.kind()) {
            start = p.start_byte();
            prev = p.prev_sibling();
        } else {
            break;
        }
    }
    text[start..decl.end_byte()].to_string()
}

struct ParamDecl {
    name: String,
    type_text: String,
    declared: Option<DeclaredType>,
}

fn formal_params(decl: Node, text: &str) -> Vec<ParamDecl> {
    let mut out = Vec::new();
    let Some(params) = decl.child_by_field_name("parameters") else {
        return out;
    };
    let mut cursor = params.walk();
    for p in params.named_children(&mut cursor) {
        match p.kind() {
            "formal_parameter" => {
                let type_text = p
                    .child_by_field_name("type")
                    .map(|t| node_text(t, text).to_string())
                    .unwrap_or_default();
                let name = p
                    .child_by_field_name("name")
                    .map(|n| node_text(n, text).to_string())
                    .unwrap_or_default();
                // `int x[]` has dimensions on the declarator: not primitive
                let has_dimensions = p
                    .child_by_field_name("dimensions")
                    .is_some();
                let declared = if has_dimensions {
                    None
                } else {
                    DeclaredType::from_type_text(&type_text)
                };
                out.push(ParamDecl { name, type_text, declared });
            }
            "spread_parameter" => {
                // varargs: keep for arity, never a site
                let type_text = node_text(p, text).to_string();
                out.push(ParamDecl { name: String::new(), type_text, declared: None });
            }
            _ => {}
        }
    }
    out
}

fn method_signature(name: &str, params: &[ParamDecl]) -> String {
    let types: Vec<&str> = params.iter().map(|p| p.type_text.as_str()).collect();
    format!("{}({})", name, types.join(", "))
}

/// Number of parameters in a signature produced by `method_signature`.
/// Commas inside generic arguments are skipped by depth tracking.
pub(crate) fn signature_arity(sig: &str) -> usize {
    let Some(open) = sig.find('(') else { return 0 };
    let inner = &sig[open + 1..sig.len().saturating_sub(1)];
    if inner.trim().is_empty() {
        return 0;
    }
    let mut depth = 0usize;
    let mut count = 1;
    for ch in inner.chars() {
        match ch {
            '<' | '(' | '[' => depth += 1,
            '>' | ')' | ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => count += 1,
            _ => {}
        }
    }
    count
}

/// Operators applied to `param` anywhere in the declaration body.
fn collect_operators(decl: Node, text: &str, param: &str) -> BTreeSet<String> {
    let mut ops = BTreeSet::new();
    let Some(body) = decl.child_by_field_name("body") else {
        return ops;
    };
    walk_nodes(body, &mut |node| {
        if node.kind() != "identifier" || node_text(node, text) != param {
            return;
        }
        // climb through parentheses to the expression consuming the identifier
        let mut parent = node.parent();
        while let Some(p) = parent {
            if p.kind() == "parenthesized_expression" {
                parent = p.parent();
            } else {
                break;
            }
        }
        let Some(p) = parent else { return };
        let op_text = match p.kind() {
            "binary_expression" | "unary_expression" => p
                .child_by_field_name("operator")
                .map(|o| node_text(o, text).to_string()),
            "assignment_expression" => p
                .child_by_field_name("operator")
                .map(|o| node_text(o, text).trim_end_matches('=').to_string()),
            _ => None,
        };
        if let Some(op) = op_text {
            if TRACKED_OPERATORS.contains(&op.as_str()) {
                ops.insert(op);
            }
        }
    });
    ops
}

/// Extract one site per primitive-type parameter of every method and
/// constructor in the unit. `char` and `boolean` parameters are skipped.
pub fn extract_parameters(unit: &SourceUnit) -> Result<Vec<ParameterSite>> {
    if unit.kind != UnitKind::CodeUnderTest {
        return Err(Error::precondition(
            "extract_parameters",
            "unit kind must be CODE_UNDER_TEST",
        ));
    }
    let tree = parse_java(unit)?;
    let root = tree.root_node();
    let package = package_name(root, &unit.text);
    let mut sites = Vec::new();
    walk_nodes(root, &mut |node| {
        if !matches!(node.kind(), "method_declaration" | "constructor_declaration") {
            return;
        }
        let Some(name_node) = node.child_by_field_name("name") else {
            return;
        };
        let name = node_text(name_node, &unit.text);
        let params = formal_params(node, &unit.text);
        let sig = method_signature(name, &params);
        let class_id = enclosing_class_id(node, &unit.text, &package);
        let method_source = declaration_with_comments(node, &unit.text);
        for (index, param) in params.iter().enumerate() {
            let Some(declared) = param.declared else { continue };
            let operators = if declared.group() == TypeGroup::Number {
                collect_operators(node, &unit.text, &param.name)
            } else {
                BTreeSet::new()
            };
            sites.push(ParameterSite {
                class_id: class_id.clone(),
                method_sig: sig.clone(),
                param_name: param.name.clone(),
                param_index: index,
                declared_type: declared,
                method_source: method_source.clone(),
                operators,
            });
        }
    });
    Ok(sites)
}

/// A literal argument classified during input extraction.
struct LiteralValue {
    text: String,
    kind: ValueKind,
    range: Range<usize>,
}

fn classify_literal(node: Node, text: &str) -> Option<LiteralValue> {
    match node.kind() {
        "string_literal" => {
            let mut content = String::new();
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                if matches!(child.kind(), "string_fragment" | "escape_sequence") {
                    content.push_str(node_text(child, text));
                }
            }
            Some(LiteralValue { text: content, kind: ValueKind::String, range: node.byte_range() })
        }
        "decimal_integer_literal"
        | "hex_integer_literal"
        | "octal_integer_literal"
        | "binary_integer_literal"
        | "decimal_floating_point_literal"
        | "hex_floating_point_literal" => Some(LiteralValue {
            text: node_text(node, text).to_string(),
            kind: ValueKind::Number,
            range: node.byte_range(),
        }),
        "unary_expression" => {
            let op = node.child_by_field_name("operator")?;
            let operand = node.child_by_field_name("operand")?;
            if node_text(op, text) == "-" && classify_literal(operand, text)
                .map(|v| v.kind == ValueKind::Number)
                .unwrap_or(false)
            {
                Some(LiteralValue {
                    text: node_text(node, text).to_string(),
                    kind: ValueKind::Number,
                    range: node.byte_range(),
                })
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Literal-initialized names visible to a test method: locals declared in
/// the method itself and `final static` fields of the declaring class.
struct LiteralScope {
    locals: BTreeMap<String, (String, ValueKind, Range<usize>)>,
    fields: BTreeMap<String, (String, ValueKind, Range<usize>)>,
}

fn literal_fields_of_class(class_body: Node, text: &str) -> BTreeMap<String, (String, ValueKind, Range<usize>)> {
    let mut out = BTreeMap::new();
    let mut cursor = class_body.walk();
    for member in class_body.named_children(&mut cursor) {
        if member.kind() != "field_declaration" {
            continue;
        }
        let mods: Vec<String> = member
            .children(&mut member.walk())
            .filter(|c| c.kind() == "modifiers")
            .flat_map(|m| {
                m.children(&mut m.walk())
                    .map(|c| node_text(c, text).to_string())
                    .collect::<Vec<_>>()
            })
            .collect();
        if !(mods.iter().any(|m| m == "final") && mods.iter().any(|m| m == "static")) {
            continue;
        }
        let mut c2 = member.walk();
        for declarator in member.named_children(&mut c2) {
            if declarator.kind() != "variable_declarator" {
                continue;
            }
            let (Some(name), Some(value)) = (
                declarator.child_by_field_name("name"),
                declarator.child_by_field_name("value"),
            ) else {
                continue;
            };
            if let Some(lit) = classify_literal(value, text) {
                out.insert(node_text(name, text).to_string(), (lit.text, lit.kind, lit.range));
            }
        }
    }
    out
}

fn literal_locals_of_method(method: Node, text: &str) -> BTreeMap<String, (String, ValueKind, Range<usize>)> {
    let mut out = BTreeMap::new();
    let Some(body) = method.child_by_field_name("body") else {
        return out;
    };
    walk_nodes(body, &mut |node| {
        if node.kind() != "local_variable_declaration" {
            return;
        }
        let mut cursor = node.walk();
        for declarator in node.named_children(&mut cursor) {
            if declarator.kind() != "variable_declarator" {
                continue;
            }
            let (Some(name), Some(value)) = (
                declarator.child_by_field_name("name"),
                declarator.child_by_field_name("value"),
            ) else {
                continue;
            };
            if let Some(lit) = classify_literal(value, text) {
                out.insert(node_text(name, text).to_string(), (lit.text, lit.kind, lit.range));
            }
        }
    });
    out
}

/// Sites grouped by callable simple name, preserving extraction order of
/// distinct signatures.
struct SiteIndex<'a> {
    by_name: BTreeMap<&'a str, Vec<(&'a str, Vec<&'a ParameterSite>)>>,
}

impl<'a> SiteIndex<'a> {
    fn build(sites: &'a [ParameterSite]) -> Self {
        let mut by_name: BTreeMap<&str, Vec<(&str, Vec<&ParameterSite>)>> = BTreeMap::new();
        for site in sites {
            let name = site.method_name();
            let group = by_name.entry(name).or_default();
            match group.iter_mut().find(|(sig, _)| *sig == site.method_sig) {
                Some((_, list)) => list.push(site),
                None => group.push((site.method_sig.as_str(), vec![site])),
            }
        }
        Self { by_name }
    }

    /// Candidate site list for a call with `argc` arguments. Signatures
    /// are filtered by arity; among same-arity overloads the first whose
    /// type groups fit the observed literal kinds wins.
    fn resolve(&self, name: &str, argc: usize, arg_kinds: &[Option<ValueKind>]) -> Option<&Vec<&'a ParameterSite>> {
        let groups = self.by_name.get(name)?;
        let matching: Vec<&(&str, Vec<&ParameterSite>)> = groups
            .iter()
            .filter(|(sig, _)| signature_arity(sig) == argc)
            .collect();
        match matching.len() {
            0 => None,
            1 => Some(&matching[0].1),
            _ => {
                let fits = |sites: &Vec<&ParameterSite>| {
                    sites.iter().all(|s| match arg_kinds.get(s.param_index) {
                        Some(Some(kind)) => group_of(*kind) == s.declared_type.group(),
                        _ => true,
                    })
                };
                matching
                    .iter()
                    .find(|(_, sites)| fits(sites))
                    .or(matching.first())
                    .map(|(_, sites)| sites)
            }
        }
    }
}

fn group_of(kind: ValueKind) -> TypeGroup {
    match kind {
        ValueKind::String => TypeGroup::String,
        ValueKind::Number => TypeGroup::Number,
    }
}

/// Bind test inputs to parameter sites. Admitted argument forms are
/// direct literals, local variables initialized with a literal in the
/// same test method, and `final static` fields of the declaring test
/// class; every other form is silently skipped.
pub fn extract_test_inputs(test: &SourceUnit, sites: &[ParameterSite]) -> Result<Vec<BoundInput>> {
    Ok(extract_test_inputs_spanned(test, sites)?
        .into_iter()
        .map(|s| s.input)
        .collect())
}

pub(crate) fn extract_test_inputs_spanned(
    test: &SourceUnit,
    sites: &[ParameterSite],
) -> Result<Vec<SpannedInput>> {
    if test.kind != UnitKind::Test {
        return Err(Error::precondition("extract_test_inputs", "unit kind must be TEST"));
    }
    if sites.is_empty() {
        return Err(Error::precondition("extract_test_inputs", "sites must be non-empty"));
    }
    let tree = parse_java(test)?;
    let root = tree.root_node();
    let index = SiteIndex::build(sites);
    let text = &test.text;
    let mut out = Vec::new();

    walk_nodes(root, &mut |method| {
        if method.kind() != "method_declaration" {
            return;
        }
        let Some(name_node) = method.child_by_field_name("name") else {
            return;
        };
        let test_id = node_text(name_node, text).to_string();
        let fields = method
            .parent() // class_body
            .map(|body| literal_fields_of_class(body, text))
            .unwrap_or_default();
        let scope = LiteralScope {
            locals: literal_locals_of_method(method, text),
            fields,
        };
        let Some(body) = method.child_by_field_name("body") else {
            return;
        };
        walk_nodes(body, &mut |node| {
            let (callee, args_node) = match node.kind() {
                "method_invocation" => {
                    let Some(name) = node.child_by_field_name("name") else { return };
                    let Some(args) = node.child_by_field_name("arguments") else { return };
                    (node_text(name, text).to_string(), args)
                }
                "object_creation_expression" => {
                    let Some(ty) = node.child_by_field_name("type") else { return };
                    let Some(args) = node.child_by_field_name("arguments") else { return };
                    let simple = node_text(ty, text)
                        .split('<')
                        .next()
                        .unwrap_or_default()
                        .rsplit('.')
                        .next()
                        .unwrap_or_default()
                        .to_string();
                    (simple, args)
                }
                _ => return,
            };
            let mut cursor = args_node.walk();
            let args: Vec<Node> = args_node.named_children(&mut cursor).collect();
            let resolved: Vec<Option<(String, ValueKind, InputOrigin, Range<usize>)>> = args
                .iter()
                .map(|arg| resolve_argument(*arg, text, &scope))
                .collect();
            let arg_kinds: Vec<Option<ValueKind>> =
                resolved.iter().map(|r| r.as_ref().map(|(_, k, _, _)| *k)).collect();
            let Some(call_sites) = index.resolve(&callee, args.len(), &arg_kinds) else {
                return;
            };
            for site in call_sites {
                let Some(Some((literal, kind, origin, range))) = resolved.get(site.param_index) else {
                    continue;
                };
                if group_of(*kind) != site.declared_type.group() {
                    continue;
                }
                out.push(SpannedInput {
                    input: BoundInput {
                        site: site.key(),
                        literal_text: literal.clone(),
                        value_kind: *kind,
                        origin: *origin,
                        test_id: test_id.clone(),
                    },
                    literal_range: range.clone(),
                    call_id: args_node.id(),
                });
            }
        });
    });
    Ok(out)
}

fn resolve_argument(
    arg: Node,
    text: &str,
    scope: &LiteralScope,
) -> Option<(String, ValueKind, InputOrigin, Range<usize>)> {
    if let Some(lit) = classify_literal(arg, text) {
        return Some((lit.text, lit.kind, InputOrigin::DirectLiteral, lit.range));
    }
    if arg.kind() == "identifier" {
        let name = node_text(arg, text);
        if let Some((literal, kind, range)) = scope.locals.get(name) {
            return Some((literal.clone(), *kind, InputOrigin::LocalVarLiteral, range.clone()));
        }
        if let Some((literal, kind, range)) = scope.fields.get(name) {
            return Some((literal.clone(), *kind, InputOrigin::FinalStaticField, range.clone()));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Number literal parsing and rewriting
// ---------------------------------------------------------------------------

/// A number literal decomposed for value-preserving rewriting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedNumber {
    pub negative: bool,
    /// Integer magnitude, when the literal is integral.
    pub magnitude: Option<u128>,
    /// Significant decimal digits (no leading/trailing zeros) and the
    /// power-of-ten exponent of the leading digit: value = 0.D × 10^(exp+1).
    pub digits: String,
    pub exponent: i64,
    /// Trailing type suffix as written (`L`, `f`, `d`, ...).
    pub suffix: String,
    /// Digits of the integer part as written (decimal literals only).
    int_digits: String,
    /// Everything after the integer part, underscores stripped.
    tail: String,
}

/// Parse a Java-style number literal (optional sign, base prefixes,
/// underscores, type suffix, decimal exponent).
pub fn parse_number_literal(literal: &str) -> Result<ParsedNumber> {
    let err = || Error::InvalidNumberLiteral(literal.to_string());
    let trimmed = literal.trim();
    if trimmed.is_empty() {
        return Err(err());
    }
    let (negative, rest) = match trimmed.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, trimmed.strip_prefix('+').unwrap_or(trimmed)),
    };
    let rest = rest.trim();
    let (rest, suffix) = match rest.chars().last() {
        Some(c @ ('l' | 'L' | 'f' | 'F' | 'd' | 'D')) if rest.len() > 1 => {
            // a trailing d/f after a hex prefix is a digit, not a suffix
            let is_hex = rest.len() > 2 && (rest.starts_with("0x") || rest.starts_with("0X"));
            if is_hex && c.is_ascii_hexdigit() {
                (rest, String::new())
            } else {
                (&rest[..rest.len() - 1], c.to_string())
            }
        }
        _ => (rest, String::new()),
    };
    let compact: String = rest.chars().filter(|&c| c != '_').collect();
    if compact.is_empty() {
        return Err(err());
    }

    let magnitude = if let Some(hex) = compact.strip_prefix("0x").or_else(|| compact.strip_prefix("0X")) {
        Some(u128::from_str_radix(hex, 16).map_err(|_| err())?)
    } else if let Some(bin) = compact.strip_prefix("0b").or_else(|| compact.strip_prefix("0B")) {
        Some(u128::from_str_radix(bin, 2).map_err(|_| err())?)
    } else if compact.len() > 1
        && compact.starts_with('0')
        && compact.chars().all(|c| ('0'..='7').contains(&c))
        && suffix.to_ascii_lowercase() != "f"
        && suffix.to_ascii_lowercase() != "d"
    {
        Some(u128::from_str_radix(&compact[1..], 8).map_err(|_| err())?)
    } else if compact.chars().all(|c| c.is_ascii_digit()) && !matches!(suffix.as_str(), "f" | "F" | "d" | "D") {
        Some(compact.parse::<u128>().map_err(|_| err())?)
    } else {
        None
    };

    // decompose decimal forms (plain, fractional, exponent)
    let (int_digits, tail, digits, exponent) = if let Some(m) = magnitude {
        let dec = m.to_string();
        let (d, e) = normalize_digits(&dec, 0)?;
        (dec, String::new(), d, e)
    } else {
        let (mantissa, exp_part) = match compact.find(['e', 'E']) {
            Some(i) => (&compact[..i], compact[i + 1..].parse::<i64>().map_err(|_| err())?),
            None => (compact.as_str(), 0i64),
        };
        let (int_part, frac_part) = match mantissa.find('.') {
            Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
            None => (mantissa, ""),
        };
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        let all_digits = format!("{int_part}{frac_part}");
        let point_exp = exp_part - frac_part.len() as i64;
        let (d, e) = normalize_digits(&all_digits, point_exp)?;
        let tail = compact[int_part.len()..].to_string();
        (int_part.to_string(), tail, d, e)
    };

    Ok(ParsedNumber {
        negative,
        magnitude,
        digits,
        exponent,
        suffix,
        int_digits,
        tail,
    })
}

/// Strip leading/trailing zeros from `digits` (valued digits × 10^shift)
/// returning significant digits and the exponent of the leading digit.
fn normalize_digits(digits: &str, shift: i64) -> Result<(String, i64)> {
    let stripped = digits.trim_start_matches('0');
    if stripped.is_empty() {
        return Ok(("0".to_string(), 0));
    }
    let significant = stripped.trim_end_matches('0');
    let exponent = (stripped.len() as i64 - 1) + shift;
    Ok((significant.to_string(), exponent))
}

impl ParsedNumber {
    /// Numeric identity usable for value-preservation checks.
    pub fn value_fingerprint(&self) -> (bool, String, i64) {
        let negative = self.negative && self.digits != "0";
        (negative, self.digits.clone(), self.exponent)
    }
}

fn group_digits_from_right(digits: &str, width: usize) -> String {
    debug_assert!(width > 0);
    let chars: Vec<char> = digits.chars().collect();
    let mut out = String::with_capacity(chars.len() + chars.len() / width);
    for (i, c) in chars.iter().enumerate() {
        let remaining = chars.len() - i;
        if i > 0 && remaining % width == 0 {
            out.push('_');
        }
        out.push(*c);
    }
    out
}

/// Rewrite a number literal into the format demanded by a NUMBER context,
/// preserving its numeric value. Sign prefixes survive; base formats
/// require an integral literal.
pub fn rewrite_number_literal(literal: &str, context: &ReadabilityContext) -> Result<String> {
    rewrite_number_literal_with_width(literal, context, DEFAULT_FIXED_GROUP_WIDTH)
}

pub fn rewrite_number_literal_with_width(
    literal: &str,
    context: &ReadabilityContext,
    fixed_group_width: usize,
) -> Result<String> {
    if context.group != TypeGroup::Number {
        return Err(Error::precondition(
            "rewrite_number_literal",
            format!("{} is not a NUMBER context", context.name),
        ));
    }
    let parsed = parse_number_literal(literal)?;
    let sign = if parsed.negative { "-" } else { "" };
    let int_suffix = match parsed.suffix.as_str() {
        "l" | "L" => parsed.suffix.clone(),
        _ => String::new(),
    };
    let float_suffix = match parsed.suffix.as_str() {
        "f" | "F" | "d" | "D" => parsed.suffix.clone(),
        _ => String::new(),
    };

    match context.name.as_str() {
        "BINARY" | "HEXADECIMAL" | "OCTAL" => {
            let Some(magnitude) = parsed.magnitude else {
                return Err(Error::InvalidNumberLiteral(format!(
                    "{literal}: base formats require an integer literal"
                )));
            };
            if !float_suffix.is_empty() {
                return Err(Error::InvalidNumberLiteral(format!(
                    "{literal}: base formats require an integer literal"
                )));
            }
            let body = match context.name.as_str() {
                "BINARY" => format!("0b{magnitude:b}"),
                "HEXADECIMAL" => format!("0x{magnitude:x}"),
                _ => format!("0{magnitude:o}"),
            };
            Ok(format!("{sign}{body}{int_suffix}"))
        }
        "SCIENTIFIC" => {
            // `L` cannot suffix a floating literal; keep f/F/d/D only
            let mantissa = if parsed.digits.len() > 1 {
                format!("{}.{}", &parsed.digits[..1], &parsed.digits[1..])
            } else {
                parsed.digits.clone()
            };
            Ok(format!("{sign}{mantissa}e{}{float_suffix}", parsed.exponent))
        }
        "LONGNUMBER" | "FIXEDLENGTH" => {
            let width = if context.name == "LONGNUMBER" { 3 } else { fixed_group_width };
            // group the integer part as written; decimal tail (fraction,
            // exponent) is carried through untouched
            let int_digits = if parsed.tail.is_empty() {
                match parsed.magnitude {
                    Some(m) => m.to_string(),
                    None => parsed.int_digits.clone(),
                }
            } else {
                parsed.int_digits.clone()
            };
            if int_digits.is_empty() {
                return Err(Error::InvalidNumberLiteral(literal.to_string()));
            }
            let grouped = group_digits_from_right(&int_digits, width);
            Ok(format!("{sign}{grouped}{}{}{}", parsed.tail, int_suffix, float_suffix))
        }
        other => Err(Error::precondition(
            "rewrite_number_literal",
            format!("no rewrite rule for context {other}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ContextRegistry;

    fn unit(text: &str, kind: UnitKind) -> SourceUnit {
        SourceUnit::new("Test.java", text, kind)
    }

    const USER_CLASS: &str = r#"
public class User {
    // method under test
    public User(String username, String password, String email) {
        this.username = username; this.password = password;
        this.email = email;
    }
}
"#;

    #[test]
    fn constructor_yields_string_sites() {
        let sites = extract_parameters(&unit(USER_CLASS, UnitKind::CodeUnderTest)).unwrap();
        assert_eq!(sites.len(), 3);
        for (i, name) in ["username", "password", "email"].iter().enumerate() {
            assert_eq!(sites[i].param_name, *name);
            assert_eq!(sites[i].param_index, i);
            assert_eq!(sites[i].declared_type, DeclaredType::String);
            assert!(sites[i].operators.is_empty());
            assert_eq!(sites[i].method_sig, "User(String, String, String)");
        }
        assert_eq!(sites[0].class_id, "User");
        assert!(sites[0].method_source.contains("// method under test"));
        assert!(!sites[0].method_source.contains("class User"));
    }

    #[test]
    fn number_sites_carry_operators() {
        let src = "class Calc { int or(int a, int b) { return a | b; } }";
        let sites = extract_parameters(&unit(src, UnitKind::CodeUnderTest)).unwrap();
        assert_eq!(sites.len(), 2);
        for site in &sites {
            assert_eq!(site.declared_type, DeclaredType::Int);
            assert_eq!(site.operators.iter().cloned().collect::<Vec<_>>(), vec!["|"]);
        }
    }

    #[test]
    fn char_and_boolean_are_omitted() {
        let src = "class C { void f(char c, boolean b) {} }";
        let sites = extract_parameters(&unit(src, UnitKind::CodeUnderTest)).unwrap();
        assert!(sites.is_empty());
    }

    #[test]
    fn empty_unit_is_not_an_error() {
        let sites = extract_parameters(&unit("", UnitKind::CodeUnderTest)).unwrap();
        assert!(sites.is_empty());
    }

    #[test]
    fn parse_failure_reports_location() {
        let err = extract_parameters(&unit("class {", UnitKind::CodeUnderTest)).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn package_and_nesting_form_class_id() {
        let src = "package com.example;\nclass Outer { class Inner { void f(int x) {} } }";
        let sites = extract_parameters(&unit(src, UnitKind::CodeUnderTest)).unwrap();
        assert_eq!(sites[0].class_id, "com.example.Outer.Inner");
    }

    #[test]
    fn operator_set_collects_through_parentheses() {
        let src = "class C { int f(int a) { int z = (a | 3) << 2; return ~a + (a % 7); } }";
        let sites = extract_parameters(&unit(src, UnitKind::CodeUnderTest)).unwrap();
        let ops: Vec<&str> = sites[0].operators.iter().map(String::as_str).collect();
        assert_eq!(ops, vec!["%", "|", "~"]);
    }

    const USER_TESTS: &str = r#"
public class UserTests {
    static final String FROM = "e@x.org";
    public void testCreateUser() {
        User user = new User("Simon", "secret", "simon@example.org");
    }
    public void testLocal() {
        String n = "Simon";
        new User(n, "s", FROM);
    }
    public void testForeignField() {
        new User(Other.NAME, "s", "e@x.org");
    }
}
"#;

    fn user_sites() -> Vec<ParameterSite> {
        extract_parameters(&unit(USER_CLASS, UnitKind::CodeUnderTest)).unwrap()
    }

    #[test]
    fn direct_literals_bind_to_sites() {
        let inputs = extract_test_inputs(&unit(USER_TESTS, UnitKind::Test), &user_sites()).unwrap();
        let direct: Vec<&BoundInput> = inputs.iter().filter(|i| i.test_id == "testCreateUser").collect();
        assert_eq!(direct.len(), 3);
        assert_eq!(direct[0].literal_text, "Simon");
        assert_eq!(direct[2].literal_text, "simon@example.org");
        assert!(direct.iter().all(|i| i.origin == InputOrigin::DirectLiteral));
        assert!(direct.iter().all(|i| i.value_kind == ValueKind::String));
    }

    #[test]
    fn locals_and_final_static_fields_bind() {
        let inputs = extract_test_inputs(&unit(USER_TESTS, UnitKind::Test), &user_sites()).unwrap();
        let local: Vec<&BoundInput> = inputs.iter().filter(|i| i.test_id == "testLocal").collect();
        assert_eq!(local.len(), 3);
        assert_eq!(local[0].literal_text, "Simon");
        assert_eq!(local[0].origin, InputOrigin::LocalVarLiteral);
        assert_eq!(local[2].literal_text, "e@x.org");
        assert_eq!(local[2].origin, InputOrigin::FinalStaticField);
    }

    #[test]
    fn foreign_field_access_is_skipped() {
        let inputs = extract_test_inputs(&unit(USER_TESTS, UnitKind::Test), &user_sites()).unwrap();
        let foreign: Vec<&BoundInput> = inputs.iter().filter(|i| i.test_id == "testForeignField").collect();
        assert_eq!(foreign.len(), 2, "Other.NAME must not bind: {foreign:?}");
        assert!(foreign.iter().all(|i| i.site.param_index != 0));
    }

    #[test]
    fn nested_invocations_and_negative_literals_bind() {
        let code = "class Calc { int or(int a, int b) { return a | b; } }";
        let test = r#"
class CalcTests {
    void test1() { int r = 7; assert r == or(4, -3); }
}
"#;
        let sites = extract_parameters(&unit(code, UnitKind::CodeUnderTest)).unwrap();
        let inputs = extract_test_inputs(&unit(test, UnitKind::Test), &sites).unwrap();
        assert_eq!(inputs.len(), 2);
        assert_eq!(inputs[0].literal_text, "4");
        assert_eq!(inputs[1].literal_text, "-3");
        assert!(inputs.iter().all(|i| i.value_kind == ValueKind::Number));
    }

    #[test]
    fn string_concatenation_is_not_admitted() {
        let test = r#"class T { void t() { new User("a" + "b", "s", "e@x.org"); } }"#;
        let inputs = extract_test_inputs(&unit(test, UnitKind::Test), &user_sites()).unwrap();
        assert!(inputs.iter().all(|i| i.site.param_index != 0));
    }

    #[test]
    fn extraction_is_deterministic() {
        let a = extract_test_inputs(&unit(USER_TESTS, UnitKind::Test), &user_sites()).unwrap();
        let b = extract_test_inputs(&unit(USER_TESTS, UnitKind::Test), &user_sites()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn literal_text_occurs_verbatim() {
        let inputs = extract_test_inputs(&unit(USER_TESTS, UnitKind::Test), &user_sites()).unwrap();
        for input in &inputs {
            assert!(
                USER_TESTS.contains(&input.literal_text),
                "{:?} not found verbatim",
                input.literal_text
            );
        }
    }

    fn number_context(name: &str) -> ReadabilityContext {
        let reg = ContextRegistry::load_default().unwrap();
        reg.lookup(name).unwrap().clone()
    }

    #[test]
    fn rewrite_base_formats() {
        assert_eq!(rewrite_number_literal("7", &number_context("BINARY")).unwrap(), "0b111");
        assert_eq!(rewrite_number_literal("254", &number_context("HEXADECIMAL")).unwrap(), "0xfe");
        assert_eq!(rewrite_number_literal("254", &number_context("OCTAL")).unwrap(), "0376");
        assert_eq!(rewrite_number_literal("-7", &number_context("BINARY")).unwrap(), "-0b111");
        assert_eq!(rewrite_number_literal("7L", &number_context("BINARY")).unwrap(), "0b111L");
        assert!(rewrite_number_literal("1.5", &number_context("BINARY")).is_err());
    }

    #[test]
    fn rewrite_grouping_formats() {
        let long = number_context("LONGNUMBER");
        assert_eq!(rewrite_number_literal("1234567890", &long).unwrap(), "1_234_567_890");
        assert_eq!(rewrite_number_literal("1234567890L", &long).unwrap(), "1_234_567_890L");
        assert_eq!(rewrite_number_literal("11_32122_745", &long).unwrap(), "1_132_122_745");
        let fixed = number_context("FIXEDLENGTH");
        assert_eq!(
            rewrite_number_literal("1111111111111111", &fixed).unwrap(),
            "1111_1111_1111_1111"
        );
        assert_eq!(rewrite_number_literal("123", &fixed).unwrap(), "123");
    }

    #[test]
    fn rewrite_scientific() {
        let sci = number_context("SCIENTIFIC");
        assert_eq!(rewrite_number_literal("12300", &sci).unwrap(), "1.23e4");
        assert_eq!(rewrite_number_literal("0.00123", &sci).unwrap(), "1.23e-3");
        assert_eq!(rewrite_number_literal("1.2e20f", &sci).unwrap(), "1.2e20f");
        assert_eq!(rewrite_number_literal("7", &sci).unwrap(), "7e0");
        assert_eq!(rewrite_number_literal("0", &sci).unwrap(), "0e0");
    }

    #[test]
    fn rewrite_preserves_value() {
        let cases = [
            ("1234567890", "LONGNUMBER"),
            ("254", "HEXADECIMAL"),
            ("7", "BINARY"),
            ("0x1f4", "LONGNUMBER"),
            ("009", "SCIENTIFIC"),
            ("1_2_3", "FIXEDLENGTH"),
        ];
        for (lit, ctx) in cases {
            let rewritten = rewrite_number_literal(lit, &number_context(ctx)).unwrap();
            assert_eq!(
                parse_number_literal(lit).unwrap().value_fingerprint(),
                parse_number_literal(&rewritten).unwrap().value_fingerprint(),
                "{lit} -> {rewritten}"
            );
        }
    }

    #[test]
    fn signature_arity_handles_generics() {
        assert_eq!(signature_arity("f()"), 0);
        assert_eq!(signature_arity("f(int)"), 1);
        assert_eq!(signature_arity("f(Map<String, Integer>, int)"), 2);
        assert_eq!(signature_arity("User(String, String, String)"), 3);
    }

    #[test]
    fn octal_literal_with_nine_is_decimal_not_octal() {
        // "009" is not valid octal; the parser treats it as decimal 9
        let parsed = parse_number_literal("009").unwrap();
        assert_eq!(parsed.magnitude, Some(9));
    }
}
