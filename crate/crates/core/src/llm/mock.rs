use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError};

/// Canned replies, served strictly in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockScript {
    /// One reply per call regardless of the prompt.
    Sequence(Vec<String>),
    /// Replies per prompt hash; each list is consumed in order.
    Keyed(BTreeMap<String, Vec<String>>),
}

struct State {
    script: MockScript,
    cursors: BTreeMap<String, usize>,
    served: usize,
    requests: Vec<ChatRequest>,
}

/// Deterministic stand-in for a model. Running out of replies is an error.
pub struct ScriptedMock {
    state: Mutex<State>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        ScriptedMock {
            state: Mutex::new(State {
                script,
                cursors: BTreeMap::new(),
                served: 0,
                requests: Vec::new(),
            }),
        }
    }

    pub fn sequence<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(MockScript::Sequence(replies.into_iter().map(Into::into).collect()))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        st.requests.push(request.clone());
        let served = st.served;
        let reply = match &st.script {
            MockScript::Sequence(replies) => replies.get(served).cloned().ok_or(LlmError::MockExhausted { served })?,
            MockScript::Keyed(map) => {
                let hash = request.prompt_hash();
                let replies = map
                    .get(&hash)
                    .ok_or_else(|| LlmError::MockUnknownPrompt { hash: hash.clone() })?;
                let cursor = st.cursors.get(&hash).copied().unwrap_or(0);
                let reply = replies
                    .get(cursor)
                    .cloned()
                    .ok_or(LlmError::MockExhausted { served: cursor })?;
                st.cursors.insert(hash, cursor + 1);
                reply
            }
        };
        st.served += 1;
        Ok(reply)
    }

    pub fn served(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).served
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).requests.clone()
    }
}
