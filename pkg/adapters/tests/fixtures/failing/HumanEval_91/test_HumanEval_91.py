from .human_answer import is_bored
import pytest

def test_is_bored():
    assert is_bored('I am bored. This is boring!') == 2
    assert is_bored('Hello world') == 0
    assert is_bored('The sky is blue. The sun is shining. I love this weather.') == 1
    assert is_bored('I think, therefore I am. I am bored?') == 2
    assert is_bored('') == 0
