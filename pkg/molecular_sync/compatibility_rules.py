from molecular_sync.models import ExperimentConfig

BLIND_MIN_SPACING = 3.0


class BaseCompatibilityRuleChecks:

    def __init__(self):
        self.__point__ = None
        self.__rules__ = {}
        self.__messages__ = {}

    def from_point(self, point: ExperimentConfig):
        self.__point__ = point

        return self

    def check_point_present(self):
        if self.__point__ is None:
            raise ValueError("You must call from_point(...) before executing rules")

    def __record__(self, rule_name: str, result: bool, message: str):
        self.__rules__[rule_name] = result
        if result:
            self.__messages__.pop(rule_name, None)
        else:
            self.__messages__[rule_name] = message

        return self

    def expect_training_sequence(self):
        self.check_point_present()
        return self.__record__("expect_training_sequence", self.__point__.is_training,
                               f"needs a known training sequence (M=1), got M={self.__point__.M}")

    def expect_molecules_at_most(self, n_max: int):
        self.check_point_present()
        molecules = self.__point__.N
        return self.__record__("expect_molecules_at_most", molecules <= n_max,
                               f"{molecules} molecules exceed the permutation limit of {n_max}")

    def expect_window_within_observation(self):
        self.check_point_present()
        window = self.__point__.window or self.__point__.N
        return self.__record__("expect_window_within_observation", window <= self.__point__.N,
                               f"window n={window} is longer than the {self.__point__.N} observed arrivals")

    def expect_symbol_spacing(self, min_ratio: float = BLIND_MIN_SPACING):
        self.check_point_present()
        return self.__record__("expect_symbol_spacing", self.__point__.Ts_over_mu >= min_ratio,
                               f"Ts={self.__point__.Ts_over_mu} mu is shorter than {min_ratio} mu, "
                               f"the first arrival may belong to a later symbol")

    def get_error_message(self):
        return "; ".join(self.__messages__[name] for name in sorted(self.__messages__))

    def passed(self):
        if len(self.__rules__) > 0:
            result = all(self.__rules__.values())
            self.clear()

            return result

        raise AttributeError("You must execute rules before checking if the rules passed")

    def failed(self):
        if len(self.__rules__) > 0:
            result = not all(self.__rules__.values())
            self.clear()

            return result

        raise AttributeError("You must execute rules before checking if the rules failed")

    def clear(self):
        self.__rules__ = {}

        return self

    def reset_messages(self):
        self.__messages__ = {}

        return self


class TrainingRuleChecks(BaseCompatibilityRuleChecks):

    def for_estimator(self, estimator: str):
        self.clear().reset_messages()
        if estimator == "mle":
            self.expect_training_sequence().expect_molecules_at_most(self.__point__.mle_max_molecules)
        elif estimator == "ule":
            self.expect_training_sequence().expect_window_within_observation()
        else:
            self.expect_training_sequence()

        return self


class BlindRuleChecks(BaseCompatibilityRuleChecks):

    def for_estimator(self, estimator: str):
        self.clear().reset_messages()
        if estimator in ("mle", "ule", "iule"):
            self.expect_training_sequence()
        else:
            self.expect_symbol_spacing()

        return self


class CompatibilityRuleChecks:

    def __init__(self):
        self.__rule_checker = None

    def from_point(self, point: ExperimentConfig):
        if point is None:
            raise ValueError("Point must be defined, received None type object")
        if point.is_training:
            self.__rule_checker = TrainingRuleChecks()
        else:
            self.__rule_checker = BlindRuleChecks()

        return self.__rule_checker.from_point(point)
