class MesaError(Exception):
    """MESA 工作台相关错误的基类"""
    def __init__(self, message: str, details: dict = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def __str__(self):
        if self.details:
            return f"{self.message} - 详细信息: {self.details}"
        return self.message

class InvalidArgumentError(MesaError):
    """参数无效的错误

    Attributes:
        field: 出错的参数名
        value: 导致错误的值
        requirement: 期望的要求
    """
    def __init__(self, message: str, field: str = None, value: any = None, requirement: str = None):
        details = {
            'field': field,
            'value': value,
            'requirement': requirement
        }
        super().__init__(message, details)

class InvalidStateError(MesaError):
    """对象状态不允许该操作

    Attributes:
        phase: 出错的阶段
        state: 出错时的状态信息
    """
    def __init__(self, message: str, phase: str = None, state: dict = None):
        details = {
            'phase': phase,
            'state': state
        }
        super().__init__(message, details)

class InfeasibleGeometryError(MesaError):
    """地标拒绝采样在预算内无法完成"""
    def __init__(self, message: str, attempts: int = None, constraints: dict = None):
        details = {
            'attempts': attempts,
            'constraints': constraints
        }
        super().__init__(message, details)

class DegenerateProfileError(MesaError):
    """探索频率存在零分量，闭式解不可用

    Attributes:
        profile: (f0, f1, f2)
    """
    def __init__(self, message: str, profile: tuple = None):
        super().__init__(message, {'profile': profile})

class InvalidConfigError(MesaError):
    """配置与任务族不兼容"""
    def __init__(self, message: str, field: str = None, value: any = None, constraints: dict = None):
        details = {
            'field': field,
            'value': value,
            'constraints': constraints
        }
        super().__init__(message, details)

class TrainingDivergedError(MesaError):
    """训练过程中出现 NaN/Inf

    Attributes:
        phase: 出错的训练阶段
        losses: 最近的损失值
    """
    def __init__(self, message: str, phase: str = None, losses: dict = None):
        details = {
            'phase': phase,
            'losses': losses
        }
        super().__init__(message, details)

class HarvestFailureError(MesaError):
    """元训练第一阶段未收集到任何高回报点

    Attributes:
        task_stats: 每个训练任务的回报统计
    """
    def __init__(self, message: str, task_stats: list = None):
        super().__init__(message, {'task_stats': task_stats})

class ValidationError(MesaError):
    """数据验证错误

    Attributes:
        field: 验证失败的字段
        value: 无效的值
        constraints: 验证约束条件
        context: 额外的上下文信息
    """
    def __init__(self, message: str, field: str = None, value: any = None,
                 constraints: dict = None, context: dict = None):
        details = {
            'field': field,
            'value': value,
            'constraints': constraints,
            'context': context
        }
        super().__init__(message, details)

class ArtifactError(MesaError):
    """产物目录缺失或内容无效"""
    def __init__(self, message: str, path: str = None, reason: str = None):
        super().__init__(message, {'path': path, 'reason': reason})
