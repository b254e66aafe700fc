"""Published reference values, kept apart from goldens derived in this repository."""

# normalized Toffoli error-rate coefficients by concatenation level, columns
# T1_bit, T2_bit, T3_bit, T1_ph, T2_ph, T3_ph (units of 1e-5 * eps**(2**j))
REFERENCE_RATES = (
    (6.5, 9.1, 20, 18, 13, 10),
    (5.9, 6.1, 8.3, 8.4, 7.8, 6.8),
    (5.8, 5.8, 7.2, 7.4, 7.3, 6.8),
    (5.8, 5.8, 7.1, 7.3, 7.3, 6.8),
    (5.8, 5.8, 7.1, 7.2, 7.3, 6.8),
    (5.8, 5.8, 7.1, 7.2, 7.3, 6.8),
)

THRESHOLD_APPROX = 1.3e-5
TRANSVERSAL_RATIO_RANGE = (4.5, 5.6)
