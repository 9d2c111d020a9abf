def is_bored(S):
    """Count the sentences in S that start with the word "I".

    Sentences are delimited by '.', '?' or '!'.
    """
    import re
    sentences = re.split(r'[.?!]\s*', S)
    return sum(sentence[0:2] == 'I ' for sentence in sentences)
