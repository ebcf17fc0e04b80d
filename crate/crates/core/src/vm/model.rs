// SPDX-License-Identifier: Apache-2.0

//! Contract models: storage layout, function descriptors and statement
//! bodies in a small typed IR, loaded from a JSON document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::txmodel::{FunctionDescriptor, Param, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("model error at {position}: {cause}")]
pub struct ModelError {
    pub position: String,
    pub cause: String,
}

fn model_err(position: impl Into<String>, cause: impl Into<String>) -> ModelError {
    ModelError { position: position.into(), cause: cause.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 6,
        }
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Mod)
    }

    pub fn is_ordering(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    pub fn is_comparison(self) -> bool {
        self.is_ordering() || matches!(self, BinOp::Eq | BinOp::Ne)
    }

    /// `a op b` iff `b op.flip() a`.
    pub fn flip(self) -> BinOp {
        match self {
            BinOp::Lt => BinOp::Gt,
            BinOp::Le => BinOp::Ge,
            BinOp::Gt => BinOp::Lt,
            BinOp::Ge => BinOp::Le,
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockField {
    Timestamp,
    Number,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Lit(Value),
    Slot(String),
    Param(String),
    MapGet { slot: String, key: Box<Expr> },
    MsgSender,
    MsgValue,
    TxOrigin,
    SelfBalance,
    Not(Box<Expr>),
    Bin { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::MapGet { key, .. } => key.visit(f),
            Expr::Not(inner) => inner.visit(f),
            Expr::Bin { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            _ => {}
        }
    }

    fn any(&self, pred: impl Fn(&Expr) -> bool) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= pred(e));
        found
    }

    pub fn reads_param(&self) -> bool {
        self.any(|e| matches!(e, Expr::Param(_)))
    }

    pub fn reads_msg_value(&self) -> bool {
        self.any(|e| matches!(e, Expr::MsgValue))
    }

    /// Storage slots (scalar or map) read anywhere in the expression.
    pub fn slots_read(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| match e {
            Expr::Slot(s) | Expr::MapGet { slot: s, .. } => {
                out.insert(s.clone());
            }
            _ => {}
        });
        out
    }

    /// Replaces `Slot(name)` by the mapped expression, once, bottom-up.
    pub fn substitute(&self, subst: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Slot(s) => subst.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::MapGet { slot, key } => Expr::MapGet { slot: slot.clone(), key: Box::new(key.substitute(subst)) },
            Expr::Not(inner) => Expr::Not(Box::new(inner.substitute(subst))),
            Expr::Bin { op, lhs, rhs } => Expr::bin(*op, lhs.substitute(subst), rhs.substitute(subst)),
            other => other.clone(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin { op, .. } => op.precedence(),
            _ => u8::MAX,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Slot(s) | Expr::Param(s) => f.write_str(s),
            Expr::MapGet { slot, key } => write!(f, "{slot}[{key}]"),
            Expr::MsgSender => f.write_str("msg.sender"),
            Expr::MsgValue => f.write_str("msg.value"),
            Expr::TxOrigin => f.write_str("tx.origin"),
            Expr::SelfBalance => f.write_str("this.balance"),
            Expr::Not(inner) if inner.precedence() < u8::MAX => write!(f, "!({inner})"),
            Expr::Not(inner) => write!(f, "!{inner}"),
            Expr::Bin { op, lhs, rhs } => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= p {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statement {
    Require(Expr),
    Assign {
        slot: String,
        value: Expr,
    },
    MapSet {
        slot: String,
        key: Expr,
        value: Expr,
    },
    Send {
        to: Expr,
        amount: Expr,
    },
    LowLevelCall {
        to: Expr,
        amount: Expr,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capture: Option<String>,
    },
    DelegateCall {
        target: Expr,
    },
    SelfDestruct {
        beneficiary: Expr,
    },
    If {
        cond: Expr,
        #[serde(rename = "then")]
        then_branch: Vec<Statement>,
        #[serde(default, rename = "else")]
        else_branch: Vec<Statement>,
    },
    ReadBlockField {
        field: BlockField,
        into: String,
    },
    Revert,
}

impl Statement {
    /// Visits this statement and all nested ones, depth first.
    pub fn walk(&self, f: &mut impl FnMut(&Statement)) {
        f(self);
        if let Statement::If { then_branch, else_branch, .. } = self {
            for s in then_branch.iter().chain(else_branch) {
                s.walk(f);
            }
        }
    }

    /// Slot written by this statement itself (not nested ones).
    pub fn written_slot(&self) -> Option<&str> {
        match self {
            Statement::Assign { slot, .. } | Statement::MapSet { slot, .. } => Some(slot),
            Statement::LowLevelCall { capture: Some(slot), .. } => Some(slot),
            Statement::ReadBlockField { into, .. } => Some(into),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotType {
    Scalar(ValueType),
    /// `mapping(address => uint)`.
    Map,
}

impl SlotType {
    fn parse(text: &str) -> Option<SlotType> {
        if text == "map" {
            Some(SlotType::Map)
        } else {
            text.parse().ok().map(SlotType::Scalar)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StorageSlot {
    pub name: String,
    pub ty: SlotType,
    pub init: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractFunction {
    pub descriptor: FunctionDescriptor,
    #[serde(default)]
    pub body: Vec<Statement>,
}

impl ContractFunction {
    pub fn name(&self) -> &str {
        &self.descriptor.name
    }

    pub fn walk(&self, mut f: impl FnMut(&Statement)) {
        for s in &self.body {
            s.walk(&mut f);
        }
    }

    pub fn any_statement(&self, pred: impl Fn(&Statement) -> bool) -> bool {
        let mut hit = false;
        self.walk(|s| hit |= pred(s));
        hit
    }

    pub fn writes_slot(&self, slot: &str) -> bool {
        self.any_statement(|s| s.written_slot() == Some(slot))
    }
}

/// Re-entrant call made by an attacker account when the contract sends it
/// ether through a low-level call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallbackCall {
    pub function: String,
    #[serde(default)]
    pub args: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractModel {
    pub name: String,
    pub storage: Vec<StorageSlot>,
    pub balance: u128,
    pub deployer_slot: Option<String>,
    pub functions: Vec<ContractFunction>,
    pub attacker_callback: Vec<CallbackCall>,
}

impl ContractModel {
    pub fn function(&self, name: &str) -> Option<&ContractFunction> {
        self.functions.iter().find(|f| f.name() == name)
    }

    pub fn callable_function(&self, name: &str) -> Option<&ContractFunction> {
        self.function(name).filter(|f| f.descriptor.is_callable())
    }

    pub fn callable_functions(&self) -> impl Iterator<Item = &ContractFunction> {
        self.functions.iter().filter(|f| f.descriptor.is_callable())
    }

    /// Callable surface, in declaration order.
    pub fn interface(&self) -> Vec<FunctionDescriptor> {
        self.callable_functions().map(|f| f.descriptor.clone()).collect()
    }

    pub fn slot(&self, name: &str) -> Option<&StorageSlot> {
        self.storage.iter().find(|s| s.name == name)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    #[serde(default)]
    storage: Vec<SlotDoc>,
    #[serde(default)]
    balance: Option<String>,
    #[serde(default)]
    deployer_slot: Option<String>,
    #[serde(default)]
    functions: Vec<ContractFunction>,
    #[serde(default)]
    attacker_callback: Vec<CallbackCall>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotDoc {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default)]
    init: Option<String>,
}

/// Parses and checks a contract-model document.
pub fn load_model(document: &str) -> Result<ContractModel, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: ModelDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        model_err(if path == "." { "$".to_string() } else { format!("$.{path}") }, e.inner().to_string())
    })?;

    let mut storage = Vec::with_capacity(doc.storage.len());
    let mut slot_types = BTreeMap::new();
    for (i, s) in doc.storage.iter().enumerate() {
        let at = format!("$.storage[{i}]");
        let ty = SlotType::parse(&s.ty).ok_or_else(|| model_err(&at, format!("unknown slot type `{}`", s.ty)))?;
        if slot_types.insert(s.name.clone(), ty).is_some() {
            return Err(model_err(&at, format!("duplicate storage slot `{}`", s.name)));
        }
        let init = match (&s.init, ty) {
            (None, _) => None,
            (Some(_), SlotType::Map) => return Err(model_err(&at, "map slots cannot have an initial value")),
            (Some(text), SlotType::Scalar(vt)) => {
                Some(Value::parse(vt, text).map_err(|e| model_err(format!("{at}.init"), e.to_string()))?)
            }
        };
        storage.push(StorageSlot { name: s.name.clone(), ty, init });
    }

    let balance = match &doc.balance {
        None => 0,
        Some(text) => Value::parse(ValueType::Uint, text)
            .ok()
            .and_then(|v| v.as_uint())
            .ok_or_else(|| model_err("$.balance", format!("invalid balance `{text}`")))?,
    };

    if let Some(slot) = &doc.deployer_slot {
        match slot_types.get(slot) {
            Some(SlotType::Scalar(ValueType::Address)) => {}
            Some(_) => return Err(model_err("$.deployer_slot", format!("slot `{slot}` is not an address"))),
            None => return Err(model_err("$.deployer_slot", format!("unknown slot `{slot}`"))),
        }
    }

    let mut names = BTreeSet::new();
    for (i, f) in doc.functions.iter().enumerate() {
        let at = format!("$.functions[{i}]");
        if !names.insert(f.name().to_string()) {
            return Err(model_err(&at, format!("duplicate function `{}`", f.name())));
        }
        let mut params = BTreeSet::new();
        for p in &f.descriptor.params {
            if !params.insert(p.name.as_str()) {
                return Err(model_err(format!("{at}.descriptor"), format!("duplicate parameter `{}`", p.name)));
            }
        }
        let scope = Scope { slots: &slot_types, params: &f.descriptor.params };
        check_block(&f.body, &scope, &format!("{at}.body"))?;
    }

    for (i, cb) in doc.attacker_callback.iter().enumerate() {
        let at = format!("$.attacker_callback[{i}]");
        let f = doc
            .functions
            .iter()
            .find(|f| f.name() == cb.function && f.descriptor.is_callable())
            .ok_or_else(|| model_err(&at, format!("no callable function `{}`", cb.function)))?;
        let tys: Vec<_> = cb.args.iter().map(Value::value_type).collect();
        if !f.descriptor.param_types().eq(tys.iter().copied()) {
            return Err(model_err(&at, "callback arguments do not match the descriptor"));
        }
    }

    Ok(ContractModel {
        name: doc.name,
        storage,
        balance,
        deployer_slot: doc.deployer_slot,
        functions: doc.functions,
        attacker_callback: doc.attacker_callback,
    })
}

struct Scope<'a> {
    slots: &'a BTreeMap<String, SlotType>,
    params: &'a [Param],
}

impl Scope<'_> {
    fn scalar_slot(&self, name: &str, at: &str) -> Result<ValueType, ModelError> {
        match self.slots.get(name) {
            Some(SlotType::Scalar(t)) => Ok(*t),
            Some(SlotType::Map) => Err(model_err(at, format!("slot `{name}` is a map"))),
            None => Err(model_err(at, format!("unresolved identifier `{name}`"))),
        }
    }

    fn map_slot(&self, name: &str, at: &str) -> Result<(), ModelError> {
        match self.slots.get(name) {
            Some(SlotType::Map) => Ok(()),
            Some(_) => Err(model_err(at, format!("slot `{name}` is not a map"))),
            None => Err(model_err(at, format!("unresolved identifier `{name}`"))),
        }
    }
}

fn expect(found: ValueType, want: ValueType, at: &str, what: &str) -> Result<(), ModelError> {
    if found == want {
        Ok(())
    } else {
        Err(model_err(at, format!("{what} must be {want}, found {found}")))
    }
}

fn type_of(e: &Expr, scope: &Scope<'_>, at: &str) -> Result<ValueType, ModelError> {
    Ok(match e {
        Expr::Lit(v) => v.value_type(),
        Expr::Slot(s) => scope.scalar_slot(s, at)?,
        Expr::Param(p) => scope
            .params
            .iter()
            .find(|q| &q.name == p)
            .map(|q| q.ty)
            .ok_or_else(|| model_err(at, format!("unresolved identifier `{p}`")))?,
        Expr::MapGet { slot, key } => {
            scope.map_slot(slot, at)?;
            expect(type_of(key, scope, at)?, ValueType::Address, at, "map key")?;
            ValueType::Uint
        }
        Expr::MsgSender | Expr::TxOrigin => ValueType::Address,
        Expr::MsgValue | Expr::SelfBalance => ValueType::Uint,
        Expr::Not(inner) => {
            expect(type_of(inner, scope, at)?, ValueType::Bool, at, "operand of `!`")?;
            ValueType::Bool
        }
        Expr::Bin { op, lhs, rhs } => {
            let l = type_of(lhs, scope, at)?;
            let r = type_of(rhs, scope, at)?;
            if l != r {
                return Err(model_err(at, format!("operands of `{}` differ: {l} vs {r}", op.symbol())));
            }
            match op {
                BinOp::And | BinOp::Or => {
                    expect(l, ValueType::Bool, at, "boolean operand")?;
                    ValueType::Bool
                }
                BinOp::Eq | BinOp::Ne => ValueType::Bool,
                o if o.is_ordering() => {
                    if !l.is_numeric() {
                        return Err(model_err(at, format!("cannot order {l} values")));
                    }
                    ValueType::Bool
                }
                _ => {
                    if !l.is_numeric() {
                        return Err(model_err(at, format!("arithmetic on {l} values")));
                    }
                    l
                }
            }
        }
    })
}

fn check_block(stmts: &[Statement], scope: &Scope<'_>, at: &str) -> Result<(), ModelError> {
    for (i, s) in stmts.iter().enumerate() {
        let at = format!("{at}[{i}]");
        match s {
            Statement::Require(cond) => expect(type_of(cond, scope, &at)?, ValueType::Bool, &at, "guard")?,
            Statement::Assign { slot, value } => {
                let t = scope.scalar_slot(slot, &at)?;
                expect(type_of(value, scope, &at)?, t, &at, "assigned value")?;
            }
            Statement::MapSet { slot, key, value } => {
                scope.map_slot(slot, &at)?;
                expect(type_of(key, scope, &at)?, ValueType::Address, &at, "map key")?;
                expect(type_of(value, scope, &at)?, ValueType::Uint, &at, "map value")?;
            }
            Statement::Send { to, amount } | Statement::LowLevelCall { to, amount, .. } => {
                expect(type_of(to, scope, &at)?, ValueType::Address, &at, "recipient")?;
                expect(type_of(amount, scope, &at)?, ValueType::Uint, &at, "amount")?;
                if let Statement::LowLevelCall { capture: Some(slot), .. } = s {
                    expect(scope.scalar_slot(slot, &at)?, ValueType::Bool, &at, "capture slot")?;
                }
            }
            Statement::DelegateCall { target } => {
                expect(type_of(target, scope, &at)?, ValueType::Address, &at, "delegate target")?
            }
            Statement::SelfDestruct { beneficiary } => {
                expect(type_of(beneficiary, scope, &at)?, ValueType::Address, &at, "beneficiary")?
            }
            Statement::If { cond, then_branch, else_branch } => {
                expect(type_of(cond, scope, &at)?, ValueType::Bool, &at, "condition")?;
                check_block(then_branch, scope, &format!("{at}.then"))?;
                check_block(else_branch, scope, &format!("{at}.else"))?;
            }
            Statement::ReadBlockField { into, .. } => {
                expect(scope.scalar_slot(into, &at)?, ValueType::Uint, &at, "block field slot")?
            }
            Statement::Revert => {}
        }
    }
    Ok(())
}
