import hypothesis

# Deterministic property tests: no example database churn, no flaky deadlines
# (some properties drive full training loops).
hypothesis.settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    max_examples=50,
    database=None,
)
hypothesis.settings.load_profile("ci")
