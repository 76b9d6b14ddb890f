import pytest

# Introspect assertions in helpers
pytest.register_assert_rewrite("tests.util")
