def max_of(xs):
    return sorted(xs)[-1]
