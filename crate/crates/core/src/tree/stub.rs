//! Configurable pass-through node for exercising tree structure without any
//! computation. Registered as type `stub` in namespace `decitree.stub`.
//!
//! init_args: `requires`, `creates`, `path_keys` (string lists); `choose`
//! (key whose path or data value names the child, by name or index);
//! `fail` (bool); `undeclared` (a key written without being declared).

use std::sync::Arc;

use serde_json::{json, Value};

use super::{Delta, InterpretContext, Node, NodeArgs, NodeContext, NodeContract, NodeError, NodeRegistry};

pub const STUB_NAMESPACE: &str = "decitree.stub";

#[derive(Debug, Clone)]
pub struct StubNode {
    name: String,
    contract: NodeContract,
    choose: Option<String>,
    fail: bool,
    undeclared: Option<String>,
}

impl StubNode {
    pub fn from_args(args: &NodeArgs) -> Result<Self, String> {
        let list = |k: &str| -> Result<Vec<String>, String> { Ok(args.get::<Vec<String>>(k)?.unwrap_or_default()) };
        let mut contract = NodeContract {
            requires: list("requires")?.into_iter().collect(),
            creates: list("creates")?.into_iter().collect(),
            path_keys: list("path_keys")?.into_iter().collect(),
        };
        let choose: Option<String> = args.get("choose")?;
        if let Some(c) = &choose {
            contract.path_keys.insert(c.clone());
        }
        Ok(StubNode {
            name: args.name.clone(),
            contract,
            choose,
            fail: args.get("fail")?.unwrap_or(false),
            undeclared: args.get("undeclared")?,
        })
    }
}

impl Node for StubNode {
    fn contract(&self) -> NodeContract {
        self.contract.clone()
    }

    fn execute(&self, _ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        if self.fail {
            return Err(NodeError::Other(format!("stub `{}` configured to fail", self.name)));
        }
        let mut delta: Delta = self.contract.creates.iter().map(|k| (k.clone(), json!({"by": self.name}))).collect();
        if let Some(k) = &self.undeclared {
            delta.insert(k.clone(), Value::Bool(true));
        }
        Ok(delta)
    }

    fn next_node(&self, ctx: &NodeContext<'_>, children: &[String]) -> Result<String, NodeError> {
        let Some(key) = &self.choose else {
            return Ok(children[0].clone());
        };
        let v = ctx
            .path_value(key)
            .or_else(|| ctx.data.get(key))
            .ok_or_else(|| NodeError::NoViableChild(format!("no `{key}` selection")))?;
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => n
                .as_u64()
                .and_then(|i| children.get(i as usize))
                .cloned()
                .ok_or_else(|| NodeError::NoViableChild(format!("child index {n} out of range"))),
            other => Err(NodeError::NoViableChild(format!("cannot route on {other}"))),
        }
    }

    fn interpret_result(&self, ctx: &InterpretContext<'_>) -> Result<Delta, NodeError> {
        Ok(Delta::from([(format!("{}.interpreted", self.name), json!(ctx.results.len()))]))
    }
}

pub fn register(registry: &mut NodeRegistry) {
    registry.register(
        STUB_NAMESPACE,
        "stub",
        Arc::new(|args, _| Ok(Arc::new(StubNode::from_args(args)?) as Arc<dyn Node>)),
    );
}
