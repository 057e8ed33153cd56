//! Digital-logic demonstration content: student prompts and the questions a
//! language model produced for them. Used by seeding, simulation and tests.

use crate::domain::QuestionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Poll,
    ClickerQuiz,
    JittQuiz,
}

impl SampleKind {
    pub fn question_kind(self) -> QuestionKind {
        match self {
            SampleKind::Poll => QuestionKind::Poll,
            SampleKind::ClickerQuiz => QuestionKind::ClickerQuiz,
            SampleKind::JittQuiz => QuestionKind::JittQuiz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub name: &'static str,
    pub kind: SampleKind,
    pub prompt: &'static str,
    /// Model output. `None` when the output was unusable and the prompt
    /// itself is the open-ended question.
    pub response: Option<&'static str>,
}

impl Sample {
    /// The question text to bank: the response when usable, else the prompt.
    pub fn question_text(&self) -> &'static str {
        self.response.unwrap_or(self.prompt)
    }
}

pub const CLICKER_POLL_1: Sample = Sample {
    name: "Clicker Poll 1",
    kind: SampleKind::Poll,
    prompt: "Create a clicker poll for the topic of basic Boolean logic with two choices",
    response: Some(
        "What is the output of the Boolean expression: NOT (A AND B)?

A) A AND B

B) NOT A OR NOT B

Step-by-step solution:
Start with the given expression: NOT (A AND B)
Apply De Morgan's theorem: NOT A OR NOT B
This is the final simplified expression, which means the correct answer is option B: NOT A OR NOT B.",
    ),
};

pub const CLICKER_POLL_2: Sample = Sample {
    name: "Clicker Poll 2",
    kind: SampleKind::Poll,
    prompt: "Create a clicker poll on Boolean logic with four options that has two correct answers",
    response: Some(
        "Which of the following Boolean expressions are equivalent to A OR (NOT B)?

A) NOT A AND B

B) A AND NOT B

C) NOT A OR B

D) NOT A AND NOT B

(Note: The correct answers are B) A AND NOT B and C) NOT A OR B)",
    ),
};

pub const CLICKER_QUIZ_1: Sample = Sample {
    name: "Clicker Quiz 1",
    kind: SampleKind::ClickerQuiz,
    prompt: "Create a clicker quiz with four choices (with the last choice as none of the above) based on the poll: What is the output of the Boolean expression: NOT (A AND
B)?

A) A AND B

B) NOT A OR NOT B
",
    response: Some(
        "What is the output of the Boolean expression: NOT (A AND B)?

A) A AND B

B) NOT A OR NOT B

C) A OR B

D) None of the above

(Note: The correct answer is B) NOT A OR NOT B)",
    ),
};

pub const CLICKER_QUIZ_2: Sample = Sample {
    name: "Clicker Quiz 2",
    kind: SampleKind::ClickerQuiz,
    prompt: "Create a clicker quiz with four choices on the topic of de Morgan's theorem for three Boolean variables",
    response: Some(
        "Which expression represents De Morgan's Theorem for three Boolean variables (A, B, and C)?

A) NOT (A OR B OR C) = NOT A AND NOT B AND NOT C

B) NOT (A AND B AND C) = NOT A OR NOT B OR NOT C

C) NOT (A AND B AND C) = NOT A AND NOT B AND NOT C

D) NOT (A OR B OR C) = NOT A OR NOT B OR NOT C

(Note: The correct answer is B) NOT (A AND B AND C) = NOT A OR NOT B OR NOT C)",
    ),
};

pub const JITT_QUIZ_1: Sample = Sample {
    name: "JiTT Quiz 1",
    kind: SampleKind::JittQuiz,
    prompt: "With an AND gate and a True constant, which essential gate is still needed to form a universal set? Explain your viewpoint.",
    response: None,
};

pub const JITT_QUIZ_2: Sample = Sample {
    name: "JiTT Quiz 2",
    kind: SampleKind::JittQuiz,
    prompt: "On the table before you are three small boxes, labeled A, B , and C. Inside each box is a colored plastic chip. One chip is red, one is white, and one is blue. You do not know which chip is in which box. Then, you are told that of the next three statements, exactly one is true:

Box A contains the red chip
Box B does not contain the red chip
Box C does not contain the blue chip
You do not know which of the three statements is the true one. From all this, determine the color of the chip in each box. Explain your answer step by step.",
    response: None,
};

pub const LOGIC_SAMPLES: [Sample; 6] = [
    CLICKER_POLL_1,
    CLICKER_POLL_2,
    CLICKER_QUIZ_1,
    CLICKER_QUIZ_2,
    JITT_QUIZ_1,
    JITT_QUIZ_2,
];
