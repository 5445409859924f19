def forever(n):
    return forever(n + 1)


def spin(n):
    while True:
        n += 1
