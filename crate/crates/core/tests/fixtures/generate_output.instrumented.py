def generate_output(argument1, base_url, version, dependencies, packages):
    swapped_argument = argument1.swapcase()
    print(f'swapped_argument: {swapped_argument}')
    
    base_component = base_url.split('//')[-1].split('.')[0]
    print(f'base_component: {base_component}')
    
    version_component = version[2:]
    print(f'version_component: {version_component}')
    
    last_dependency = dependencies[-1].capitalize()
    print(f'last_dependency: {last_dependency}')
    
    joined_packages = ','.join(packages).title()
    print(f'joined_packages: {joined_packages}')
    
    res = f"{swapped_argument}|{base_component}|{version_component}|{last_dependency}|{joined_packages}"
    print(f'return_val: {res}')
    return res
